import math

import numpy as np
import pytest

import drt


def test_published_parameter_counts():
    assert abs(drt.count_params() / 1e6 - 1.18) / 1.18 < 0.01
    u1 = drt.ModelConfig()
    u1.blocks_per_rtb = 1
    assert abs(drt.count_params(u1) / 1e6 - 0.841) / 0.841 < 0.01
    lengths = set()
    for recursions in (1, 2, 3, 4):
        c = drt.ModelConfig()
        c.recursions = recursions
        lengths.add(drt.count_params(c))
    assert len(lengths) == 1


def test_complexity_and_macs():
    assert drt.wmsa_complexity(56, 56, 96, 7) == (145108992, 2003828736)
    macs = drt.count_macs(drt.ModelConfig(), 56, 56)
    assert "attention_scores" in macs and all(v > 0 for v in macs.values())


def test_metrics():
    x = np.random.default_rng(0).uniform(0, 0.9, (3, 16, 16)).astype(np.float32)
    assert drt.psnr(x, x) == 100.0
    assert drt.psnr(x, x + np.float32(0.1)) == pytest.approx(20.0, abs=1e-4)
    assert drt.ssim(x, x) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        drt.ssim(x[:, :8, :8], x[:, :8, :8])


def test_rain_is_seeded_and_additive():
    clean = drt.clean_scene(32, 32, seed=3)
    a = drt.synthesize_rain(clean, seed=1)
    b = drt.synthesize_rain(clean, seed=1)
    assert np.array_equal(a, b)
    assert (a >= clean).all()
    assert np.array_equal(drt.synthesize_rain(clean, seed=1, count_min=0, count_max=0), clean)


def test_model_forward_and_checkpoint(tmp_path):
    cfg = drt.config_from_dict({"N": "1", "L": "2", "U": "1", "D": "8", "M": "2"})
    model = drt.Model.init(cfg, seed=4)
    assert model.num_params == drt.count_params(cfg)
    img = drt.clean_scene(10, 13, seed=5)
    out = model(img)
    assert out.shape == img.shape and np.isfinite(out).all()
    path = tmp_path / "toy.ckpt"
    model.save(path)
    again = drt.Model.load(path)
    assert again.config == cfg
    assert np.array_equal(again(img), out)
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(drt.FormatError):
        drt.Model.load(path)


def test_bad_config_is_rejected():
    with pytest.raises(ValueError):
        drt.config_from_dict({"bogus": "1"})
    with pytest.raises(ValueError):
        drt.psnr(np.zeros((2, 4, 4), np.float32), np.zeros((2, 4, 4), np.float32))
