#include "drt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "drt/checkpoint.hpp"
#include "drt/errors.hpp"
#include "drt/ops.hpp"

namespace drt {

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid train config: ") + what);
  };
  require(lr >= 0.0, "lr must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(crop >= 1, "crop must be >= 1");
  require(flip_prob >= 0.0 && flip_prob <= 1.0, "flip_prob must lie in [0, 1]");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
  require(max_epochs >= 0, "max_epochs must be >= 0");
  require(patience >= 1, "patience must be >= 1");
  require(plateau_window >= 0, "plateau_window must be >= 0");
}

template <typename T>
OptimizerState<T> OptimizerState<T>::for_params(const std::vector<Tensor<T>>& params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.first_moment.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
    s.second_moment.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
  }
  return s;
}

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, OptimizerState<T>& state, const AdamHyper& hyper) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state does not match parameter list");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);
  const T b1 = static_cast<T>(hyper.beta1), b2 = static_cast<T>(hyper.beta2);
  const T lr = static_cast<T>(hyper.lr), eps = static_cast<T>(hyper.eps);
  const T c1 = static_cast<T>(correction1), c2 = static_cast<T>(correction2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != values.size()) throw DimensionError("adam_step: moment buffer shape mismatch");
    const bool has_grad = params[i].has_grad();
    const auto grad = has_grad ? params[i].grad() : std::span<const T>{};
    for (std::size_t j = 0; j < values.size(); ++j) {
      const T g = has_grad ? grad[j] : T(0);
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const T mhat = m[j] / c1;
      const T vhat = v[j] / c2;
      values[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename T>
std::vector<Tensor<T>> parameter_list(const DrtParameters<T>& params) {
  std::vector<Tensor<T>> out;
  for (auto& nt : named_parameters(params)) out.push_back(nt.tensor);
  return out;
}

Image crop_image(const Image& image, Index top, Index left, Index height, Index width) {
  const Index h = image.dim(1), w = image.dim(2);
  if (top < 0 || left < 0 || top + height > h || left + width > w) {
    throw DimensionError("crop window exceeds image " + shape_to_string(image.shape()));
  }
  const auto src = image.data();
  std::vector<float> out(static_cast<std::size_t>(3 * height * width));
  for (Index c = 0; c < 3; ++c)
    for (Index r = 0; r < height; ++r)
      for (Index col = 0; col < width; ++col)
        out[(c * height + r) * width + col] = src[(c * h + top + r) * w + left + col];
  return Image(Shape{3, height, width}, std::move(out));
}

Image flip_horizontal(const Image& image) {
  const Index h = image.dim(1), w = image.dim(2);
  const auto src = image.data();
  std::vector<float> out(src.size());
  for (Index c = 0; c < 3; ++c)
    for (Index r = 0; r < h; ++r)
      for (Index col = 0; col < w; ++col) out[(c * h + r) * w + col] = src[(c * h + r) * w + (w - 1 - col)];
  return Image(image.shape(), std::move(out));
}

ImagePair augment(const ImagePair& pair, std::int64_t crop, double flip_prob, std::mt19937_64& rng) {
  if (pair.clean.shape() != pair.degraded.shape()) throw DimensionError("augment: pair shapes differ");
  const Index h = pair.clean.dim(1), w = pair.clean.dim(2);
  if (crop > h || crop > w) {
    throw DimensionError("augment: image " + shape_to_string(pair.clean.shape()) + " is smaller than crop " +
                         std::to_string(crop));
  }
  const Index top = std::uniform_int_distribution<Index>(0, h - crop)(rng);
  const Index left = std::uniform_int_distribution<Index>(0, w - crop)(rng);
  const bool flip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < flip_prob;
  ImagePair out{crop_image(pair.clean, top, left, crop, crop), crop_image(pair.degraded, top, left, crop, crop), pair.id};
  if (flip) {
    out.clean = flip_horizontal(out.clean);
    out.degraded = flip_horizontal(out.degraded);
  }
  return out;
}

template <typename T>
Tensor<T> mean_pair_loss(const std::vector<Tensor<T>>& preds, const std::vector<Tensor<T>>& targets) {
  if (preds.empty() || preds.size() != targets.size()) throw DimensionError("mean_pair_loss: prediction/target count mismatch");
  Tensor<T> total = mse_loss(preds[0], targets[0]);
  for (std::size_t i = 1; i < preds.size(); ++i) total = add(total, mse_loss(preds[i], targets[i]));
  return scale(total, static_cast<T>(1.0 / static_cast<double>(preds.size())));
}

template <typename T>
TrainingState<T> TrainingState<T>::fresh(DrtParameters<T> params) {
  TrainingState s;
  s.optimizer = OptimizerState<T>::for_params(parameter_list(params));
  s.params = std::move(params);
  return s;
}

std::mt19937_64 epoch_rng(std::uint64_t seed, std::int64_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(static_cast<std::uint64_t>(epoch) >> 32)};
  return std::mt19937_64(seq);
}

namespace {

template <typename T>
Tensor<T> as_batch(const Image& image) {
  std::vector<T> values(image.data().begin(), image.data().end());
  return Tensor<T>(Shape{1, image.dim(0), image.dim(1), image.dim(2)}, std::move(values));
}

template <typename T>
Checkpoint<T> snapshot(const ModelConfig& config, const DrtParameters<T>& params, const TrainingState<T>& state,
                       const TrainConfig& train) {
  Checkpoint<T> ck;
  ck.config = config;
  ck.params = params;
  ck.optimizer = state.optimizer;
  ck.train_config = train;
  ck.progress = state.progress;
  ck.seed = train.seed;
  return ck;
}

// Stop rules evaluated on the best-so-far curve after `losses.size()` epochs.
std::string stop_reason(const std::vector<double>& losses, std::int64_t best_epoch, const TrainConfig& train) {
  const auto done = static_cast<std::int64_t>(losses.size());
  if (done - 1 - best_epoch >= train.patience) return "patience";
  if (train.plateau_window > 0 && done > train.plateau_window) {
    auto best_until = [&](std::int64_t n) { return *std::min_element(losses.begin(), losses.begin() + n); };
    const double earlier = best_until(done - train.plateau_window);
    const double now = best_until(done);
    if (earlier - now < train.plateau_min_delta) return "plateau";
  }
  return {};
}

}  // namespace

template <typename T>
FitResult<T> fit(const ModelConfig& config, TrainingState<T> state, const std::vector<ImagePair>& dataset,
                 const TrainConfig& train, const FitOptions& options) {
  config.validate();
  train.validate();
  if (dataset.empty()) throw std::invalid_argument("fit: dataset is empty");
  for (const auto& pair : dataset) validate_pair(pair);

  namespace fs = std::filesystem;
  const bool persist = !options.output_dir.empty();
  if (persist) fs::create_directories(options.output_dir);

  FitResult<T> result;
  TrainProgress& progress = state.progress;
  auto params = parameter_list(state.params);
  if (progress.best_epoch >= 0 && persist && fs::exists(options.output_dir / "best.ckpt")) {
    result.best_params = load_checkpoint<T>(options.output_dir / "best.ckpt").params;
  } else {
    result.best_params = convert_params<T>(state.params);
  }

  const AdamHyper hyper{train.lr, train.beta1, train.beta2, train.adam_eps};
  const std::int64_t n = static_cast<std::int64_t>(dataset.size());
  const std::int64_t batch = std::min<std::int64_t>(train.batch_size, n);
  const auto clock_start = std::chrono::steady_clock::now();

  if (persist && progress.epochs_completed == 0) {
    fs::remove(options.output_dir / "best.ckpt");
    save_checkpoint(options.output_dir / "last.ckpt", snapshot(config, state.params, state, train));
  }

  std::string reason;
  if (progress.epochs_completed > 0) reason = stop_reason(progress.epoch_losses, progress.best_epoch, train);
  while (reason.empty() && progress.epochs_completed < train.max_epochs) {
    const std::int64_t epoch = progress.epochs_completed;
    auto rng = epoch_rng(train.seed, epoch);
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (std::int64_t start = 0; start < n; start += batch) {
      const std::int64_t stop = std::min(n, start + batch);
      const T share = static_cast<T>(1.0 / static_cast<double>(stop - start));
      for (auto& p : params) p.zero_grad();
      for (std::int64_t i = start; i < stop; ++i) {
        const ImagePair sample = augment(dataset[static_cast<std::size_t>(order[i])], train.crop, train.flip_prob, rng);
        Tensor<T> pred = forward(as_batch<T>(sample.degraded), state.params, config);
        Tensor<T> loss = mse_loss(pred, as_batch<T>(sample.clean));
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " + sample.id);
        }
        loss_sum += value;
        scale(loss, share).backward();
      }
      adam_step(params, state.optimizer, hyper);
    }

    const double mean_loss = loss_sum / static_cast<double>(n);
    progress.epoch_losses.push_back(mean_loss);
    progress.epochs_completed = epoch + 1;
    const bool improved = progress.best_epoch < 0 || mean_loss < progress.best_loss;
    if (improved) {
      progress.best_loss = mean_loss;
      progress.best_epoch = epoch;
      // Snapshot taken at the end of the epoch whose running loss was lowest.
      result.best_params = convert_params<T>(state.params);
    }

    EpochRecord record{epoch, mean_loss, train.lr,
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count()};
    result.log.push_back(record);
    if (options.log) {
      nlohmann::json j{{"epoch", record.epoch}, {"mean_loss", record.mean_loss}, {"lr", record.lr},
                       {"wall_time_s", record.wall_seconds}};
      *options.log << j.dump() << '\n';
      options.log->flush();
    }
    if (options.on_epoch) options.on_epoch(record);
    if (persist) {
      save_checkpoint(options.output_dir / "last.ckpt", snapshot(config, state.params, state, train));
      if (improved) save_checkpoint(options.output_dir / "best.ckpt", snapshot(config, result.best_params, state, train));
    }
    reason = stop_reason(progress.epoch_losses, progress.best_epoch, train);
  }
  if (reason.empty()) reason = "max_epochs";
  if (persist && !fs::exists(options.output_dir / "best.ckpt")) {
    save_checkpoint(options.output_dir / "best.ckpt", snapshot(config, result.best_params, state, train));
  }

  result.best_loss = progress.best_loss;
  result.best_epoch = progress.best_epoch;
  result.stop_reason = reason;
  result.final_state = std::move(state);
  return result;
}

template <typename T>
double evaluate_mse(const ModelConfig& config, const DrtParameters<T>& params, const std::vector<ImagePair>& pairs) {
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& p : pairs) {
    Tensor<T> pred = forward(as_batch<T>(p.degraded), params, config);
    total += static_cast<double>(mse_loss(pred, as_batch<T>(p.clean)).item());
  }
  return total / static_cast<double>(pairs.size());
}

template <typename T>
Image infer(const ModelConfig& config, const DrtParameters<T>& params, const Image& image) {
  NoGradGuard no_grad;
  Tensor<T> out = forward(as_batch<T>(image), params, config);
  std::vector<float> values(out.data().begin(), out.data().end());
  return Image(image.shape(), std::move(values));
}

#define DRT_INSTANTIATE(T)                                                                                 \
  template struct OptimizerState<T>;                                                                       \
  template struct TrainingState<T>;                                                                        \
  template void adam_step(std::vector<Tensor<T>>&, OptimizerState<T>&, const AdamHyper&);                  \
  template std::vector<Tensor<T>> parameter_list(const DrtParameters<T>&);                                 \
  template Tensor<T> mean_pair_loss(const std::vector<Tensor<T>>&, const std::vector<Tensor<T>>&);         \
  template FitResult<T> fit(const ModelConfig&, TrainingState<T>, const std::vector<ImagePair>&,           \
                            const TrainConfig&, const FitOptions&);                                        \
  template double evaluate_mse(const ModelConfig&, const DrtParameters<T>&, const std::vector<ImagePair>&); \
  template Image infer(const ModelConfig&, const DrtParameters<T>&, const Image&);
DRT_INSTANTIATE(float)
DRT_INSTANTIATE(double)
#undef DRT_INSTANTIATE

}  // namespace drt
