#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "drt/model.hpp"
#include "drt/training.hpp"

namespace drt {

/// On-disk layout:
///   bytes 0..3   magic "DRT1"
///   bytes 4..7   header length N, uint32 little-endian
///   next N bytes UTF-8 JSON header: format version, dtype, seed, model
///                config, tensor manifest [{name, shape, offset}], optional
///                optimizer step, train config and progress
///   remainder    raw little-endian scalars of every manifest tensor, in
///                manifest order, offsets relative to the start of this block
template <typename T>
struct Checkpoint {
  ModelConfig config;
  DrtParameters<T> params;
  std::optional<OptimizerState<T>> optimizer;
  std::optional<TrainConfig> train_config;
  std::optional<TrainProgress> progress;
  std::uint64_t seed = 0;
};

inline constexpr char kCheckpointMagic[4] = {'D', 'R', 'T', '1'};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& checkpoint);

/// Throws FormatError on bad magic, truncation, malformed header, or a
/// manifest that disagrees with the config or the blob size.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

/// Serialized parameter scalar count recorded in a checkpoint's manifest
/// (optimizer moments excluded).
std::int64_t checkpoint_parameter_count(const std::filesystem::path& path);

}  // namespace drt
