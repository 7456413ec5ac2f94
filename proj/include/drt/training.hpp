#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "drt/image.hpp"
#include "drt/model.hpp"

namespace drt {

struct TrainConfig {
  double lr = 1e-4;
  std::int64_t batch_size = 8;
  std::int64_t crop = 56;
  double flip_prob = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t max_epochs = 100;
  // Stop after this many epochs without a new best loss.
  std::int64_t patience = 100;
  // Stop when the best loss improved by less than plateau_min_delta over the
  // last plateau_window epochs. A window of 0 disables the rule.
  std::int64_t plateau_window = 50;
  double plateau_min_delta = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers, one pair per parameter, plus the step count.
template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::int64_t step = 0;

  static OptimizerState for_params(const std::vector<Tensor<T>>& params);
};

/// Bias-corrected Adam. Parameters without a gradient are treated as having
/// a zero gradient.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, OptimizerState<T>& state, const AdamHyper& hyper);

template <typename T>
std::vector<Tensor<T>> parameter_list(const DrtParameters<T>& params);

/// Same random crop window and flip decision for both images of the pair.
ImagePair augment(const ImagePair& pair, std::int64_t crop, double flip_prob, std::mt19937_64& rng);

Image crop_image(const Image& image, Index top, Index left, Index height, Index width);
Image flip_horizontal(const Image& image);

/// Mean of per-pair MSE values.
template <typename T>
Tensor<T> mean_pair_loss(const std::vector<Tensor<T>>& preds, const std::vector<Tensor<T>>& targets);

struct EpochRecord {
  std::int64_t epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

/// Everything beyond parameters and optimizer moments needed to resume.
struct TrainProgress {
  std::int64_t epochs_completed = 0;
  std::vector<double> epoch_losses;
  double best_loss = 0.0;
  std::int64_t best_epoch = -1;
};

template <typename T>
struct TrainingState {
  DrtParameters<T> params;
  OptimizerState<T> optimizer;
  TrainProgress progress;

  static TrainingState fresh(DrtParameters<T> params);
};

struct FitOptions {
  /// When set, last.ckpt is written after every epoch and best.ckpt whenever
  /// the epoch loss improves.
  std::filesystem::path output_dir;
  /// Newline-delimited JSON records, one per epoch.
  std::ostream* log = nullptr;
  std::function<void(const EpochRecord&)> on_epoch;
};

template <typename T>
struct FitResult {
  std::vector<EpochRecord> log;
  DrtParameters<T> best_params;
  double best_loss = 0.0;
  std::int64_t best_epoch = -1;
  std::string stop_reason;
  TrainingState<T> final_state;
};

/// Epoch loop over shuffled mini-batches. Batch gradients are accumulated one
/// sample at a time, so memory scales with a single image. Epoch e draws its
/// shuffle and augmentation from an RNG seeded by (seed, e), which makes a run
/// resumed at an epoch boundary identical to an uninterrupted one.
///
/// On resume, best parameters are reloaded from output_dir/best.ckpt when it
/// exists; otherwise the resumed parameters seed the best snapshot.
///
/// Throws NumericError on a non-finite loss and std::invalid_argument on an
/// empty dataset.
template <typename T>
FitResult<T> fit(const ModelConfig& config, TrainingState<T> state, const std::vector<ImagePair>& dataset,
                 const TrainConfig& train, const FitOptions& options = {});

/// Mean MSE of the model over the (unaugmented) pairs, evaluated without a graph.
template <typename T>
double evaluate_mse(const ModelConfig& config, const DrtParameters<T>& params,
                    const std::vector<ImagePair>& pairs);

/// Forward pass on one [3, H, W] image without recording a graph.
template <typename T>
Image infer(const ModelConfig& config, const DrtParameters<T>& params, const Image& image);

std::mt19937_64 epoch_rng(std::uint64_t seed, std::int64_t epoch);

}  // namespace drt
