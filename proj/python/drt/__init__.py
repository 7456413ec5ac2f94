"""Python bindings for the drt deraining library.

Images are float32 arrays shaped (3, H, W) with values in [0, 1].
"""

from ._core import (
    DimensionError,
    FormatError,
    IoError,
    Model,
    ModelConfig,
    NumericError,
    UsageError,
    __version__,
    clean_scene,
    config_from_dict,
    count_macs,
    count_params,
    load_config,
    psnr,
    ssim,
    synthesize_rain,
    wmsa_complexity,
)

__all__ = [
    "DimensionError",
    "FormatError",
    "IoError",
    "Model",
    "ModelConfig",
    "NumericError",
    "UsageError",
    "__version__",
    "clean_scene",
    "config_from_dict",
    "count_macs",
    "count_params",
    "load_config",
    "psnr",
    "ssim",
    "synthesize_rain",
    "wmsa_complexity",
]
