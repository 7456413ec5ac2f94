// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero if
// any criterion fails. Pass criterion ids (1 2 ... 6a 6b ...) to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "drt/accounting.hpp"
#include "drt/checkpoint.hpp"
#include "drt/config_io.hpp"
#include "drt/grad_check.hpp"
#include "drt/metrics.hpp"
#include "drt/model.hpp"
#include "drt/ops.hpp"
#include "drt/rain.hpp"
#include "drt/training.hpp"
#include "drt/window_attention.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace drt;
namespace fs = std::filesystem;
using drt::testing::bitwise_equal;
using drt::testing::random_tensor;

namespace {

const fs::path kSource = DRT_SOURCE_DIR;
const fs::path kWork = fs::path(DRT_WORK_DIR) / "acceptance_work";

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_params(const DrtParameters<float>& a, const DrtParameters<float>& b) {
  auto na = named_parameters(a), nb = named_parameters(b);
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i)
    if (!bitwise_equal(na[i].tensor.data(), nb[i].tensor.data())) return false;
  return true;
}

ModelConfig nlu(int n, int l, int u) {
  ModelConfig c;
  c.rtb_count = n;
  c.recursions = l;
  c.blocks_per_rtb = u;
  return c;
}

// ---- 1 ----------------------------------------------------------------------
void parameter_table(Outcome& o) {
  struct Row {
    ModelConfig c;
    double published;
    const char* name;
  };
  const std::vector<Row> rows{{nlu(6, 3, 2), 1.18, "reference"}, {nlu(3, 3, 2), 0.591, "N=3"},
                              {nlu(9, 3, 2), 1.77, "N=9"},       {nlu(8, 2, 2), 1.57, "N=8,L=2"},
                              {nlu(6, 3, 1), 0.841, "U=1"},      {nlu(6, 3, 3), 1.52, "U=3"}};
  double worst = 0;
  for (const auto& r : rows) {
    const double m = count_params(r.c) / 1e6;
    const double rel = std::abs(m - r.published) / r.published;
    worst = std::max(worst, rel);
    o.require(rel <= 0.01, std::string(r.name) + " " + fmt("%.4fM", m));
    o.detail << r.name << " " << fmt("%.4fM", m) << "; ";
  }
  const auto base = count_params(nlu(6, 1, 2));
  for (int l : {2, 3, 4}) o.require(count_params(nlu(6, l, 2)) == base, "L=" + std::to_string(l) + " differs from L=1");
  o.detail << "L=1..4 all " << base << "; worst rel err " << fmt("%.3g", worst);
}

// ---- 2 ----------------------------------------------------------------------
void complexity(Outcome& o) {
  auto c = wmsa_complexity(56, 56, 96, 7);
  o.require(c.windowed == 145108992u && c.global == 2003828736u, "56x56x96 M=7 values");
  for (std::uint64_t h : {1u, 7u, 14u, 33u, 224u})
    for (std::uint64_t ch : {8u, 96u, 180u})
      for (std::uint64_t m : {2u, 7u, 8u}) {
        const std::uint64_t w = h + 3, hw = h * w;
        const auto r = wmsa_complexity(h, w, ch, m);
        o.require(r.windowed == 4 * hw * ch * ch + 2 * m * m * hw * ch, "windowed form");
        o.require(r.global == 4 * hw * ch * ch + 2 * hw * hw * ch, "global form");
      }
  const auto report = count_macs(ModelConfig{}, 336, 336);
  o.detail << "windowed " << c.windowed << ", global " << c.global << "; MACs at 3x336x336 (reference "
           << kPublishedMacsG << " G):";
  for (const auto& item : report.items) o.detail << " " << item.name << "=" << fmt("%.2fG", item.macs / 1e9);
  o.detail << " total=" << fmt("%.2fG", report.total() / 1e9);
}

// ---- 3 ----------------------------------------------------------------------
void gradients(Outcome& o) {
  double worst_op = 0;
  auto op = [&](const char* name, const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> in) {
    auto r = grad_check(f, std::move(in), 1e-5, 1e-4);
    worst_op = std::max(worst_op, r.max_relative_error);
    o.require(r.passed, std::string(name) + " " + fmt("%.3g", r.max_relative_error));
  };
  auto t = [](Shape s, std::uint64_t seed, double lo = -1, double hi = 1) { return random_tensor<double>(s, seed, lo, hi, true); };
  auto w = [](Shape s, std::uint64_t seed) { return random_tensor<double>(s, seed + 500); };
  {
    auto a = t({3, 4}, 1), b = t({4}, 2), c = t({3, 4}, 3);
    auto p = w({3, 4}, 1);
    op("add", [&] { return sum(mul(add(a, b), p)); }, {a, b});
    op("sub", [&] { return sum(mul(sub(a, c), p)); }, {a, c});
    op("mul", [&] { return sum(mul(mul(a, c), p)); }, {a, c});
    op("scale", [&] { return mean(mul(scale(a, 1.7), p)); }, {a});
    op("reshape", [&] { return sum(mul(reshape(a, {4, 3}), w({4, 3}, 2))); }, {a});
  }
  {
    auto a = t({2, 3, 4}, 4), b = t({2, 4, 5}, 5), lw = t({4, 5}, 6), lb = t({5}, 7);
    op("matmul", [&] { return sum(mul(matmul(a, b), w({2, 3, 5}, 3))); }, {a, b});
    op("linear", [&] { return sum(mul(linear(a, lw, lb), w({2, 3, 5}, 4))); }, {a, lw, lb});
    op("permute", [&] { return sum(mul(permute(a, {2, 0, 1}), w({4, 2, 3}, 5))); }, {a});
    op("transpose", [&] { return sum(mul(transpose_last(a), w({2, 4, 3}, 6))); }, {a});
  }
  {
    auto x = t({3, 6}, 8, -2, 2), g = t({6}, 9, 0.5, 1.5), be = t({6}, 10);
    op("softmax", [&] { return sum(mul(softmax(x, 1), w({3, 6}, 7))); }, {x});
    op("layer_norm", [&] { return sum(mul(layer_norm(x, g, be), w({3, 6}, 8))); }, {x, g, be});
    op("gelu", [&] { return sum(mul(gelu(x), w({3, 6}, 9))); }, {x});
    op("leaky_relu", [&] { return sum(mul(leaky_relu(x, 0.2), w({3, 6}, 10))); }, {x});
    auto y = t({3, 6}, 11);
    op("mse_loss", [&] { return mse_loss(x, y); }, {x, y});
  }
  {
    auto x = t({1, 2, 5, 6}, 12), k = t({3, 2, 3, 3}, 13), kb = t({3}, 14), k2 = t({3, 2, 2, 2}, 15);
    auto x2 = t({1, 2, 4, 6}, 23);
    op("conv2d", [&] { return sum(mul(conv2d(x, k, kb, 1, 1), w({1, 3, 5, 6}, 11))); }, {x, k, kb});
    op("conv2d/stride2", [&] { return sum(mul(conv2d(x2, k2, kb, 2, 0), w({1, 3, 2, 3}, 12))); }, {x2, k2, kb});
  }
  {
    auto s = t({1, 5, 3, 4}, 16);
    auto probe = w({6, 4, 4}, 13);
    op("pad+partition", [&] { return sum(mul(window_partition(pad_to_window_multiple(s, 2).first, 2), probe)); }, {s});
    AttentionParams<double> ap{t({4, 12}, 17, -0.7, 0.7), t({12}, 18, -0.3, 0.3), t({4, 4}, 19, -0.7, 0.7),
                               t({4}, 20, -0.3, 0.3), t({9, 2}, 21), 2, 2};
    auto tokens = t({2, 4, 4}, 22);
    op("window_attention",
       [&] { return sum(mul(multi_head_attention(tokens, ap), w({2, 4, 4}, 14))); },
       {tokens, ap.qkv_weight, ap.qkv_bias, ap.proj_weight, ap.proj_bias, ap.bias_table});
  }

  const auto cfg = load_run_config(kSource / "configs/toy.cfg").model;
  auto p = zero_params<double>(cfg);
  drt::testing::randomize(p, 18, 0.25);
  auto img = random_tensor<double>({1, 3, 8, 8}, 19, 0, 1);
  auto target = random_tensor<double>({1, 3, 8, 8}, 20, 0, 1);
  std::vector<Tensor<double>> inputs;
  Index n = 0;
  for (const auto& nt : named_parameters(p)) {
    inputs.push_back(nt.tensor);
    n += nt.tensor.numel();
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto r = grad_check([&] { return mse_loss(forward(img, p, cfg), target); }, inputs, 1e-5, 1e-3);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.require(r.passed, "end-to-end");
  o.detail << "per-op worst " << fmt("%.2e", worst_op) << " (tol 1e-4); end-to-end over " << n << " parameters worst "
           << fmt("%.2e", r.max_relative_error) << " (tol 1e-3) in " << fmt("%.1fs", secs);
}

// ---- 4 ----------------------------------------------------------------------
void weight_sharing(Outcome& o) {
  ModelConfig c;
  c.rtb_count = 1;
  c.blocks_per_rtb = 2;
  c.embed_dim = 4;
  c.heads = 2;
  c.window = 2;
  auto params = zero_params<double>(c);
  drt::testing::randomize(params, 16);
  auto rtb = params.rtbs.front();
  for (auto& b : rtb.blocks)
    for (auto x : drt::testing::stb_tensors(b)) x.set_requires_grad(true);
  auto s = random_tensor<double>({1, 3, 4, 4}, 17);
  auto probe = random_tensor<double>({1, 3, 4, 4}, 18);
  for (int l : {2, 3}) {
    const double gap = drt::testing::tied_vs_untied_gap(rtb, l, s, probe);
    o.require(gap < 1e-8, "L=" + std::to_string(l));
    o.detail << "L=" << l << " max gap " << fmt("%.2e", gap) << "; ";
  }
}

// ---- 5 ----------------------------------------------------------------------
void identities(Outcome& o) {
  const std::vector<Index> sizes{1, 7, 10, 56, 100};
  ModelConfig small = load_run_config(kSource / "configs/toy.cfg").model;
  small.window = 7;
  NoGradGuard guard;
  int cases = 0;
  for (const ModelConfig& cfg : {small, ModelConfig{}}) {
    auto p = init_params<float>(cfg, 1);
    auto zeroed = p;
    for (auto* t : {&zeroed.reconstruct.weight, &zeroed.reconstruct.bias}) {
      *t = Tensor<float>::zeros(t->shape());
    }
    for (Index h : sizes)
      for (Index w : sizes) {
        if (cfg.embed_dim > 8 && h != w) continue;  // full-size model only on the diagonal
        auto x = random_tensor<float>({1, 3, h, w}, static_cast<std::uint64_t>(h * 1000 + w), -3, 3);
        o.require(forward(x, p, cfg).shape() == x.shape(), "shape " + std::to_string(h) + "x" + std::to_string(w));
        o.require(bitwise_equal(forward(x, zeroed, cfg).data(), x.data()), "identity " + std::to_string(h) + "x" + std::to_string(w));
        ++cases;
      }
  }
  int rt = 0;
  for (Index m : {2, 7})
    for (Index h : sizes)
      for (Index w : {Index{1}, Index{13}, Index{56}}) {
        auto x = random_tensor<double>({2, h, w, 3}, static_cast<std::uint64_t>(h + w + m));
        auto [padded, layout] = pad_to_window_multiple(x, m);
        o.require(bitwise_equal(window_reverse(window_partition(padded, m), layout).data(), x.data()), "roundtrip");
        ++rt;
      }
  o.detail << cases << " shape+identity cases bitwise, " << rt << " partition roundtrips bitwise";
}

// ---- 6a ---------------------------------------------------------------------
void overfit(Outcome& o) {
  const auto rc = load_run_config(kSource / "configs/toy.cfg");
  std::vector<ImagePair> pairs;
  for (int i = 0; i < 2; ++i) {
    RainParams rp;
    rp.seed = 100 + static_cast<std::uint64_t>(i);
    pairs.push_back(synthesize_rain(make_clean_scene(56, 56, 200 + i), rp, "toy" + std::to_string(i)));
  }
  TrainConfig t = rc.train;
  const std::int64_t steps_per_epoch = (2 + t.batch_size - 1) / t.batch_size;
  t.max_epochs = 2000 / steps_per_epoch;
  const auto start = init_params<float>(rc.model, t.seed);
  const double before = evaluate_mse(rc.model, start, pairs);
  const auto t0 = std::chrono::steady_clock::now();
  auto r = fit(rc.model, TrainingState<float>::fresh(start), pairs, t);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double after = evaluate_mse(rc.model, r.final_state.params, pairs);
  const auto steps = r.final_state.optimizer.step;
  o.require(steps <= 2000, "step budget");
  o.require(std::abs(t.lr - 1e-3) < 1e-15, "lr");
  o.require(after < 1e-3, "final MSE");
  o.detail << steps << " Adam steps, lr " << t.lr << ": MSE " << fmt("%.3e", before) << " -> " << fmt("%.3e", after)
           << " (threshold 1e-3), " << fmt("%.0fs", secs);
}

// ---- 6b ---------------------------------------------------------------------
int cli(std::vector<std::string> args, std::string* captured = nullptr) {
  args.insert(args.begin(), "drt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, std::cerr);
  if (captured) *captured = out.str();
  return code;
}

std::pair<double, int> mean_psnr(const fs::path& tsv) {
  std::ifstream in(tsv);
  std::string line;
  std::getline(in, line);
  int rows = 0;
  double mean = NAN;
  while (std::getline(in, line)) {
    std::istringstream f(line);
    std::string id;
    double db = NAN;
    std::getline(f, id, '\t');
    f >> db;
    if (id == "mean") mean = db;
    else ++rows;
  }
  return {mean, rows};
}

void generalization(Outcome& o) {
  const fs::path dir = kWork / "6b";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto train_dir = dir / "train", held_dir = dir / "held_out", run_dir = dir / "run";
  o.require(cli({"synth", "--generate", "64", "--size", "64", "--seed", "1", "--out-dir", train_dir.string()}) == 0, "synth train");
  o.require(cli({"synth", "--generate", "16", "--size", "64", "--seed", "2", "--out-dir", held_dir.string()}) == 0, "synth held-out");
  if (!o.pass) return;

  // Held-out scenes must not repeat training scenes.
  std::set<std::string> seen;
  for (const auto& e : read_manifest(train_dir / "pairs.tsv")) seen.insert(file_bytes(e.clean));
  for (const auto& e : read_manifest(held_dir / "pairs.tsv")) o.require(!seen.count(file_bytes(e.clean)), "held-out overlap");

  std::string summary;
  const auto t0 = std::chrono::steady_clock::now();
  const int code = cli({"train", "--manifest", (train_dir / "pairs.tsv").string(), "--config",
                        (kSource / "configs/reduced.cfg").string(), "--out", run_dir.string()},
                       &summary);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  o.require(code == 0, "train exit " + std::to_string(code));
  o.require(minutes <= 30.0, "training exceeded 30 minutes");
  if (code != 0) return;

  o.require(cli({"eval", "--manifest", (held_dir / "pairs.tsv").string(), "--identity", "--tsv",
                 (dir / "identity.tsv").string()}) == 0,
            "eval identity");
  o.require(cli({"eval", "--manifest", (held_dir / "pairs.tsv").string(), "--checkpoint",
                 (run_dir / "best.ckpt").string(), "--tsv", (dir / "model.tsv").string()}) == 0,
            "eval model");
  const auto [base, base_rows] = mean_psnr(dir / "identity.tsv");
  const auto [model, model_rows] = mean_psnr(dir / "model.tsv");
  o.require(base_rows == 16 && model_rows == 16, "16 held-out rows");
  o.require(model - base >= 3.0, "gain below 3 dB");
  while (!summary.empty() && summary.back() == '\n') summary.pop_back();
  o.detail << "train " << fmt("%.1f min", minutes) << " (" << summary << "); held-out mean PSNR " << fmt("%.2f", model)
           << " dB vs identity " << fmt("%.2f", base) << " dB, gain " << fmt("%.2f dB", model - base) << " (need 3)";
}

// ---- 7 ----------------------------------------------------------------------
void determinism(Outcome& o) {
  const fs::path dir = kWork / "7";
  fs::remove_all(dir);
  ModelConfig cfg = load_run_config(kSource / "configs/toy.cfg").model;
  std::vector<ImagePair> pairs;
  for (int i = 0; i < 3; ++i) {
    RainParams rp;
    rp.seed = 40 + static_cast<std::uint64_t>(i);
    pairs.push_back(synthesize_rain(make_clean_scene(16, 16, 50 + i), rp));
  }
  TrainConfig t;
  t.lr = 1e-3;
  t.batch_size = 2;
  t.crop = 12;
  t.flip_prob = 0.5;
  t.max_epochs = 6;
  t.plateau_window = 0;
  t.seed = 9;
  auto run = [&](const std::string& name, const TrainConfig& tc, std::optional<TrainingState<float>> from = {}) {
    FitOptions opt;
    opt.output_dir = dir / name;
    fs::create_directories(opt.output_dir);
    auto state = from ? *from : TrainingState<float>::fresh(init_params<float>(cfg, tc.seed));
    return fit(cfg, state, pairs, tc, opt);
  };
  run("a", t);
  run("b", t);
  o.require(file_bytes(dir / "a/last.ckpt") == file_bytes(dir / "b/last.ckpt"), "repeat last.ckpt");
  o.require(file_bytes(dir / "a/best.ckpt") == file_bytes(dir / "b/best.ckpt"), "repeat best.ckpt");

  auto ck = load_checkpoint<float>(dir / "a/last.ckpt");
  save_checkpoint(dir / "a/resaved.ckpt", ck);
  auto again = load_checkpoint<float>(dir / "a/resaved.ckpt");
  o.require(file_bytes(dir / "a/last.ckpt") == file_bytes(dir / "a/resaved.ckpt"), "resave bytes");
  o.require(same_params(ck.params, again.params), "roundtrip params");
  o.require(ck.optimizer && again.optimizer && ck.optimizer->first_moment == again.optimizer->first_moment &&
                ck.optimizer->second_moment == again.optimizer->second_moment,
            "roundtrip optimizer");

  auto half = t;
  half.max_epochs = 3;
  run("c", half);
  auto mid = load_checkpoint<float>(dir / "c/last.ckpt");
  auto resumed = run("c", t, TrainingState<float>{mid.params, *mid.optimizer, *mid.progress});
  o.require(resumed.final_state.progress.epoch_losses == ck.progress->epoch_losses, "loss trajectory");
  o.require(file_bytes(dir / "c/last.ckpt") == file_bytes(dir / "a/last.ckpt"), "resumed last.ckpt");
  o.require(file_bytes(dir / "c/best.ckpt") == file_bytes(dir / "a/best.ckpt"), "resumed best.ckpt");
  o.detail << "2 identical runs, save/load/save, and 3+3 resume vs 6 epochs: checkpoints " << file_bytes(dir / "a/last.ckpt").size()
           << " bytes, all byte-identical";
}

// ---- 8 ----------------------------------------------------------------------
void metrics(Outcome& o) {
  auto x = random_tensor<double>({3, 32, 32}, 1, 0, 0.9);
  std::vector<double> shifted(x.data().begin(), x.data().end());
  for (double& v : shifted) v += 0.1;
  const double offset_db = psnr(x, Tensor<double>(x.shape(), shifted));
  o.require(fmt("%.2f", offset_db) == "20.00" && std::abs(offset_db - 20.0) < 1e-9, "0.1 offset PSNR");
  std::vector<float> flat(3 * 48 * 48, 0.4f);
  Tensor<float> gray({3, 48, 48}, flat);
  for (float& v : flat) v += 0.1f;
  const double float_db = psnr(gray, Tensor<float>({3, 48, 48}, flat));
  o.require(fmt("%.2f", float_db) == "20.00", "0.1 offset PSNR (float)");

  double worst_ssim_self = 0, worst_psnr = 0, worst_ssim = 0;
  for (std::uint64_t s = 0; s < 6; ++s) {
    auto a = random_tensor<float>({3, 20 + Index(s), 24}, s + 10, 0, 1);
    auto b = random_tensor<float>({3, 20 + Index(s), 24}, s + 30, 0, 1);
    auto scene = make_clean_scene(20 + Index(s), 24, s);
    RainParams rp;
    rp.seed = s;
    auto rain = synthesize_rain(scene, rp);
    worst_ssim_self = std::max({worst_ssim_self, std::abs(ssim(a, a) - 1.0), std::abs(ssim(scene, scene) - 1.0)});
    worst_psnr = std::max({worst_psnr, std::abs(psnr(a, b) - drt::testing::psnr_oracle(a, b)),
                           std::abs(psnr(rain.clean, rain.degraded) - drt::testing::psnr_oracle(rain.clean, rain.degraded))});
    worst_ssim = std::max({worst_ssim, std::abs(ssim(a, b) - drt::testing::ssim_oracle(a, b)),
                           std::abs(ssim(rain.clean, rain.degraded) - drt::testing::ssim_oracle(rain.clean, rain.degraded))});
  }
  o.require(worst_ssim_self < 1e-9, "SSIM(x,x)");
  o.require(worst_psnr < 1e-9, "PSNR oracle");
  o.require(worst_ssim < 1e-9, "SSIM oracle");
  o.detail << "offset PSNR " << fmt("%.12f", offset_db) << " dB (float " << fmt("%.6f", float_db) << "); |SSIM(x,x)-1| "
           << fmt("%.1e", worst_ssim_self) << "; oracle gaps PSNR " << fmt("%.1e", worst_psnr) << ", SSIM "
           << fmt("%.1e", worst_ssim);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::pair<const char*, void (*)(Outcome&)>>> criteria{
      {"1", {"parameter table", parameter_table}},   {"2", {"complexity closed forms", complexity}},
      {"3", {"gradient fidelity", gradients}},       {"4", {"weight sharing", weight_sharing}},
      {"5", {"architectural identities", identities}}, {"6a", {"toy overfit", overfit}},
      {"6b", {"held-out generalization", generalization}}, {"7", {"determinism and persistence", determinism}},
      {"8", {"metrics", metrics}}};
  std::set<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& [id, entry] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      entry.second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "[exception: " << e.what() << "]";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << entry.first << "): " << o.detail.str()
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
