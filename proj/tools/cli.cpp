#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "drt/accounting.hpp"
#include "drt/checkpoint.hpp"
#include "drt/config_io.hpp"
#include "drt/errors.hpp"
#include "drt/image.hpp"
#include "drt/metrics.hpp"
#include "drt/rain.hpp"
#include "drt/training.hpp"
#include "drt/window_attention.hpp"

#ifndef DRT_VERSION
#define DRT_VERSION "0.0.0"
#endif

namespace drt::cli {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

enum class Level { Quiet, Error, Warn, Info, Debug };

Level level_from_env() {
  const char* raw = std::getenv("DRT_LOG_LEVEL");
  if (!raw) return Level::Info;
  std::string v(raw);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "quiet" || v == "off") return Level::Quiet;
  if (v == "error") return Level::Error;
  if (v == "warn" || v == "warning") return Level::Warn;
  if (v == "debug") return Level::Debug;
  return Level::Info;
}

class Log {
 public:
  explicit Log(std::ostream& sink) : sink_(sink), level_(level_from_env()) {}
  void error(const std::string& msg) const { emit(Level::Error, "error", msg); }
  void warn(const std::string& msg) const { emit(Level::Warn, "warn", msg); }
  void info(const std::string& msg) const { emit(Level::Info, "info", msg); }
  void debug(const std::string& msg) const { emit(Level::Debug, "debug", msg); }

 private:
  void emit(Level at, const char* tag, const std::string& msg) const {
    if (level_ >= at) sink_ << "drt: " << tag << ": " << msg << '\n';
  }
  std::ostream& sink_;
  Level level_;
};

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), stream};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

ordered_json as_object(const std::vector<std::pair<std::string, std::string>>& kv) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : kv) j[k] = v;
  return j;
}

void write_run_manifest(const fs::path& dir, const std::string& command, ordered_json body) {
  ordered_json j;
  j["tool"] = "drt";
  j["version"] = DRT_VERSION;
  j["command"] = command;
  for (auto& [k, v] : body.items()) j[k] = v;
  std::ofstream out(dir / "run_manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "run_manifest.json").string());
  out << j.dump(2) << '\n';
}

void write_resolved_config(const fs::path& path, const RunConfig& rc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# model\n";
  for (const auto& [k, v] : to_key_values(rc.model)) out << k << " = " << v << '\n';
  out << "# training\n";
  for (const auto& [k, v] : to_key_values(rc.train)) out << k << " = " << v << '\n';
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string clean_dir;
  std::int64_t generate = 0;
  std::int64_t size = 64;
  std::string out_dir;
  std::uint64_t seed = 0;
  RainParams rain;
  std::optional<double> intensity;
};

int cmd_synth(const SynthArgs& a, std::ostream& out, const Log& log) {
  if (a.clean_dir.empty() == (a.generate == 0)) {
    throw UsageError("synth: give exactly one of --clean-dir or --generate");
  }
  RainParams rain = a.rain;
  if (a.intensity) rain.intensity_min = rain.intensity_max = *a.intensity;
  rain.validate();

  std::vector<std::pair<std::string, Image>> cleans;
  if (!a.clean_dir.empty()) {
    const auto files = list_images(a.clean_dir);
    if (files.empty()) throw IoError("synth: no .png or .ppm images in " + a.clean_dir);
    for (const auto& f : files) cleans.emplace_back(f.stem().string(), load_image(f));
  } else {
    if (a.generate < 0 || a.size < 1) throw UsageError("synth: --generate and --size must be positive");
    for (std::int64_t i = 0; i < a.generate; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "scene_%04lld", static_cast<long long>(i));
      cleans.emplace_back(name, make_clean_scene(a.size, a.size, derive_seed(a.seed, static_cast<std::uint64_t>(i), 0)));
    }
  }

  const fs::path root(a.out_dir);
  fs::create_directories(root / "clean");
  fs::create_directories(root / "rainy");
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < cleans.size(); ++i) {
    RainParams p = rain;
    p.seed = derive_seed(a.seed, i, 1);
    const ImagePair pair = synthesize_rain(cleans[i].second, p, cleans[i].first);
    const fs::path clean_path = root / "clean" / (cleans[i].first + ".png");
    const fs::path rainy_path = root / "rainy" / (cleans[i].first + ".png");
    save_image(clean_path, pair.clean);
    save_image(rainy_path, pair.degraded);
    entries.push_back({clean_path, rainy_path});
    log.debug("wrote " + rainy_path.string());
  }
  write_manifest(root / "pairs.tsv", entries);

  ordered_json body;
  body["seed"] = a.seed;
  body["rain"] = as_object(to_key_values(rain));
  body["inputs"] = {{"clean_dir", a.clean_dir}, {"generate", a.generate}, {"size", a.size}};
  body["outputs"] = {{"manifest", (root / "pairs.tsv").string()}, {"pairs", entries.size()}};
  write_run_manifest(root, "synth", body);
  out << "wrote " << entries.size() << " pairs to " << (root / "pairs.tsv").string() << '\n';
  return kOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> epochs;
  std::optional<double> lr;
  bool resume = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, const Log& log) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (a.seed) rc.train.seed = *a.seed;
  if (a.epochs) rc.train.max_epochs = *a.epochs;
  if (a.lr) rc.train.lr = *a.lr;
  rc.model.validate();
  rc.train.validate();

  const auto pairs = load_pairs(read_manifest(a.manifest));
  const fs::path root(a.out_dir);
  fs::create_directories(root);

  TrainingState<float> state;
  if (a.resume) {
    auto ck = load_checkpoint<float>(root / "last.ckpt");
    if (!(ck.config == rc.model)) throw UsageError("train: --resume config differs from the checkpoint's model config");
    if (!ck.optimizer || !ck.progress) throw FormatError("train: last.ckpt has no optimizer state to resume from");
    state.params = std::move(ck.params);
    state.optimizer = std::move(*ck.optimizer);
    state.progress = std::move(*ck.progress);
    log.info("resuming after epoch " + std::to_string(state.progress.epochs_completed));
  } else {
    state = TrainingState<float>::fresh(init_params<float>(rc.model, rc.train.seed));
  }

  write_resolved_config(root / "config.txt", rc);
  std::ofstream train_log(root / "train_log.jsonl", a.resume ? std::ios::app : std::ios::trunc);
  if (!train_log) throw IoError("cannot write " + (root / "train_log.jsonl").string());

  FitOptions options;
  options.output_dir = root;
  options.log = &train_log;
  options.on_epoch = [&](const EpochRecord& r) {
    log.info("epoch " + std::to_string(r.epoch) + " loss " + fixed(r.mean_loss, 8));
  };
  const auto result = fit(rc.model, std::move(state), pairs, rc.train, options);

  ordered_json body;
  body["seed"] = rc.train.seed;
  body["model"] = as_object(to_key_values(rc.model));
  body["train"] = as_object(to_key_values(rc.train));
  body["inputs"] = {{"manifest", a.manifest}, {"config", a.config}, {"pairs", pairs.size()}, {"resume", a.resume}};
  body["outputs"] = {{"best_checkpoint", (root / "best.ckpt").string()},
                     {"last_checkpoint", (root / "last.ckpt").string()},
                     {"log", (root / "train_log.jsonl").string()},
                     {"resolved_config", (root / "config.txt").string()}};
  write_run_manifest(root, "train", body);

  out << "epochs " << result.final_state.progress.epochs_completed << ", stop: " << result.stop_reason;
  if (result.best_epoch >= 0) out << ", best loss " << fixed(result.best_loss, 8) << " at epoch " << result.best_epoch;
  out << '\n';
  return kOk;
}

// ---- infer -----------------------------------------------------------------

struct InferArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
};

int cmd_infer(const InferArgs& a, std::ostream& out, const Log& log) {
  const auto ck = load_checkpoint<float>(a.checkpoint);
  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(a.input)) {
    fs::create_directories(a.output);
    for (const auto& f : list_images(a.input)) jobs.emplace_back(f, fs::path(a.output) / f.filename());
    if (jobs.empty()) throw IoError("infer: no .png or .ppm images in " + a.input);
  } else {
    const fs::path target(a.output);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    jobs.emplace_back(a.input, target);
  }
  for (const auto& [src, dst] : jobs) {
    const Image y = infer(ck.config, ck.params, load_image(src));
    save_image(dst, y);
    log.debug("wrote " + dst.string());
  }

  const fs::path out_dir = fs::is_directory(a.output) ? fs::path(a.output) : fs::path(a.output).parent_path();
  ordered_json body;
  body["seed"] = ck.seed;
  body["model"] = as_object(to_key_values(ck.config));
  body["inputs"] = {{"checkpoint", a.checkpoint}, {"input", a.input}};
  body["outputs"] = {{"output", a.output}, {"images", jobs.size()}};
  write_run_manifest(out_dir.empty() ? fs::path(".") : out_dir, "infer", body);
  out << "derained " << jobs.size() << (jobs.size() == 1 ? " image\n" : " images\n");
  return kOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string manifest;
  std::string checkpoint;
  bool identity = false;
  std::string tsv;
};

struct EvalRow {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, const Log& log) {
  if (a.identity == !a.checkpoint.empty()) throw UsageError("eval: give exactly one of --checkpoint or --identity");
  std::optional<Checkpoint<float>> ck;
  if (!a.identity) ck = load_checkpoint<float>(a.checkpoint);

  const auto entries = read_manifest(a.manifest);
  std::vector<EvalRow> rows;
  std::size_t failed = 0;
  for (const auto& e : entries) {
    const std::string id = e.degraded.filename().string();
    try {
      const auto pair = load_pairs({e}).front();
      Image restored = pair.degraded;
      if (ck) {
        // Score what `infer` would write: clamped and quantized to 8 bits.
        const Image y = infer(ck->config, ck->params, pair.degraded);
        restored = image_from_rgb8(image_to_rgb8(y), y.dim(1), y.dim(2));
      }
      rows.push_back({id, psnr(restored, pair.clean), ssim(restored, pair.clean)});
    } catch (const std::exception& ex) {
      ++failed;
      log.error("skipped " + id + ": " + ex.what());
    }
  }
  if (rows.empty()) {
    log.error("eval: none of the " + std::to_string(entries.size()) + " pairs could be scored");
    return kIo;
  }

  double mean_psnr = 0.0, mean_ssim = 0.0;
  for (const auto& r : rows) {
    mean_psnr += r.psnr;
    mean_ssim += r.ssim;
  }
  mean_psnr /= static_cast<double>(rows.size());
  mean_ssim /= static_cast<double>(rows.size());

  if (!a.tsv.empty()) {
    std::ofstream t(a.tsv);
    if (!t) throw IoError("cannot write " + a.tsv);
    t << "id\tpsnr_db\tssim\n" << std::setprecision(17);
    for (const auto& r : rows) t << r.id << '\t' << r.psnr << '\t' << r.ssim << '\n';
    t << "mean\t" << mean_psnr << '\t' << mean_ssim << '\n';
  }

  std::size_t width = 4;
  for (const auto& r : rows) width = std::max(width, r.id.size());
  out << std::left << std::setw(static_cast<int>(width)) << "id" << "  " << std::right << std::setw(9) << "PSNR(dB)"
      << "  " << std::setw(8) << "SSIM" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(width)) << r.id << "  " << std::right << std::setw(9)
        << fixed(r.psnr, 3) << "  " << std::setw(8) << fixed(r.ssim, 5) << '\n';
  }
  out << std::left << std::setw(static_cast<int>(width)) << "mean" << "  " << std::right << std::setw(9)
      << fixed(mean_psnr, 3) << "  " << std::setw(8) << fixed(mean_ssim, 5) << '\n';
  if (failed > 0) out << failed << " of " << entries.size() << " pairs skipped\n";
  return kOk;
}

// ---- count -----------------------------------------------------------------

struct CountArgs {
  std::string config;
  std::string input_shape = "3x336x336";
};

std::vector<std::int64_t> parse_shape(const std::string& text) {
  std::vector<std::int64_t> dims;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(part, &used);
      if (used != part.size() || v < 1) throw std::invalid_argument(part);
      dims.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("--input-shape: expected CxHxW with positive integers, got '" + text + "'");
    }
  }
  if (dims.size() != 3) throw UsageError("--input-shape: expected CxHxW, got '" + text + "'");
  return dims;
}

int cmd_count(const CountArgs& a, std::ostream& out) {
  const ModelConfig config = a.config.empty() ? ModelConfig{} : load_run_config(a.config).model;
  const auto shape = parse_shape(a.input_shape);
  if (shape[0] != config.channels) {
    throw UsageError("--input-shape has " + std::to_string(shape[0]) + " channels, config expects " +
                     std::to_string(config.channels));
  }

  out << "config:";
  for (const auto& [k, v] : to_key_values(config)) out << ' ' << k << '=' << v;
  out << '\n';

  const std::int64_t params = count_params(config);
  const double millions = static_cast<double>(params) / 1e6;
  out << "parameters: " << params << " (" << fixed(millions, 3) << "M)\n";
  if (const auto ref = published_params_m(config)) {
    const double rel = (millions - *ref) / *ref;
    out << "  published " << *ref << "M, relative error " << fixed(100.0 * rel, 2) << "%"
        << (std::abs(rel) <= 0.01 ? " (within 1%)" : " (OUTSIDE the 1% band)") << '\n';
  }

  const MacReport macs = count_macs(config, shape[1], shape[2]);
  out << "MACs for one " << shape[0] << "x" << shape[1] << "x" << shape[2] << " forward pass:\n";
  std::size_t name_w = 5, rule_w = 4;
  for (const auto& item : macs.items) {
    name_w = std::max(name_w, item.name.size());
    rule_w = std::max(rule_w, item.rule.size());
  }
  for (const auto& item : macs.items) {
    out << "  " << std::left << std::setw(static_cast<int>(name_w)) << item.name << "  " << std::right << std::setw(16)
        << item.macs << "  " << std::setw(10) << fixed(static_cast<double>(item.macs) / 1e9, 3) << " G  " << std::left
        << item.rule << '\n';
  }
  out << "  " << std::left << std::setw(static_cast<int>(name_w)) << "total" << "  " << std::right << std::setw(16)
      << macs.total() << "  " << std::setw(10) << fixed(static_cast<double>(macs.total()) / 1e9, 3) << " G\n";
  if (config == ModelConfig{} && shape[1] == 336 && shape[2] == 336) {
    out << "  published reference: " << kPublishedMacsG << " G. The counting convention behind it is not stated;\n"
        << "  this audit counts every recursion, both attention matmuls and all convs, and omits\n"
        << "  norms, softmax, activations and bias adds, so the two figures are not directly comparable.\n";
  }

  const auto h = static_cast<std::uint64_t>(shape[1] / config.patch);
  const auto w = static_cast<std::uint64_t>(shape[2] / config.patch);
  const auto cx = wmsa_complexity(h, w, static_cast<std::uint64_t>(config.embed_dim),
                                  static_cast<std::uint64_t>(config.window));
  out << "attention complexity per block on a " << h << "x" << w << "x" << config.embed_dim << " token map:\n"
      << "  windowed (M=" << config.window << ")  4hwC^2 + 2M^2hwC = " << cx.windowed << '\n'
      << "  global          4hwC^2 + 2(hw)^2C = " << cx.global << '\n';
  return kOk;
}

int guarded(const std::function<int()>& body, const Log& log) {
  try {
    return body();
  } catch (const FormatError& e) {
    log.error(e.what());
    return kFormat;
  } catch (const NumericError& e) {
    log.error(e.what());
    return kNumeric;
  } catch (const IoError& e) {
    log.error(e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    log.error(e.what());
    return kIo;
  } catch (const UsageError& e) {
    log.error(e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {
    log.error(e.what());
    return kUsage;
  } catch (const std::exception& e) {
    log.error(e.what());
    return kFailure;
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  const Log log(err);
  CLI::App app{"Rain-streak removal with a recursive windowed transformer", "drt"};
  app.set_version_flag("--version", DRT_VERSION);
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Add synthetic rain to clean images and write a pair manifest");
  s->add_option("--clean-dir", synth.clean_dir, "Directory of clean .png/.ppm images");
  s->add_option("--generate", synth.generate, "Generate this many procedural clean scenes instead");
  s->add_option("--size", synth.size, "Side length of generated scenes")->capture_default_str();
  s->add_option("--out-dir", synth.out_dir, "Output dataset directory")->required();
  s->add_option("--seed", synth.seed, "Base seed")->capture_default_str();
  s->add_option("--count-min", synth.rain.count_min, "Fewest streaks per image")->capture_default_str();
  s->add_option("--count-max", synth.rain.count_max, "Most streaks per image")->capture_default_str();
  s->add_option("--angle-min", synth.rain.angle_min, "Streak angle lower bound, degrees from vertical")->capture_default_str();
  s->add_option("--angle-max", synth.rain.angle_max, "Streak angle upper bound")->capture_default_str();
  s->add_option("--length-min", synth.rain.length_min, "Shortest streak, pixels")->capture_default_str();
  s->add_option("--length-max", synth.rain.length_max, "Longest streak, pixels")->capture_default_str();
  s->add_option("--width", synth.rain.width, "Streak width, pixels")->capture_default_str();
  s->add_option("--intensity", synth.intensity, "Fixed streak intensity (sets both bounds)");
  s->add_option("--intensity-min", synth.rain.intensity_min, "Streak intensity lower bound")->capture_default_str();
  s->add_option("--intensity-max", synth.rain.intensity_max, "Streak intensity upper bound")->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train on a pair manifest");
  t->add_option("--manifest", train.manifest, "Pair manifest (clean<TAB>degraded)")->required();
  t->add_option("--config", train.config, "key = value config file; omitted keys use the reference defaults");
  t->add_option("--out", train.out_dir, "Output directory for checkpoints and logs")->required();
  t->add_option("--seed", train.seed, "Overrides the config seed");
  t->add_option("--epochs", train.epochs, "Overrides max_epochs");
  t->add_option("--lr", train.lr, "Overrides the learning rate");
  t->add_flag("--resume", train.resume, "Continue from <out>/last.ckpt");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Derain an image or a directory of images");
  i->add_option("--checkpoint", inf.checkpoint, "Checkpoint file")->required();
  i->add_option("--input", inf.input, "Input image or directory")->required();
  i->add_option("--output", inf.output, "Output image or directory")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "PSNR/SSIM of a checkpoint, or of the degraded inputs, over a manifest");
  e->add_option("--manifest", ev.manifest, "Pair manifest")->required();
  auto* ck_opt = e->add_option("--checkpoint", ev.checkpoint, "Checkpoint to evaluate");
  auto* id_opt = e->add_flag("--identity", ev.identity, "Score the degraded images as they are");
  ck_opt->excludes(id_opt);
  e->add_option("--tsv", ev.tsv, "Also write a tab-separated table here");

  CountArgs count;
  auto* c = app.add_subcommand("count", "Parameter and MAC accounting");
  c->add_option("--config", count.config, "key = value config file");
  c->add_option("--input-shape", count.input_shape, "CxHxW")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kUsage;
  }

  if (s->parsed()) return guarded([&] { return cmd_synth(synth, out, log); }, log);
  if (t->parsed()) return guarded([&] { return cmd_train(train, out, log); }, log);
  if (i->parsed()) return guarded([&] { return cmd_infer(inf, out, log); }, log);
  if (e->parsed()) return guarded([&] { return cmd_eval(ev, out, log); }, log);
  if (c->parsed()) return guarded([&] { return cmd_count(count, out); }, log);
  return kUsage;
}

}  // namespace drt::cli
