#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "drt/accounting.hpp"
#include "drt/checkpoint.hpp"
#include "drt/config_io.hpp"
#include "drt/errors.hpp"
#include "drt/image.hpp"
#include "drt/metrics.hpp"
#include "test_util.hpp"

#ifdef DRT_HAVE_CLI
#include "cli.hpp"
#endif

using namespace drt;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("drt_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Config, DefaultsAndAliases) {
  auto rc = run_config_from({});
  EXPECT_EQ(rc.model, ModelConfig{});
  auto toy = run_config_from(parse_key_values("N = 1\nL=2\n  U = 1 # trailing\nD = 8\nM = 2\n# note\n\nlr = 1e-3\n"));
  EXPECT_EQ(toy.model.rtb_count, 1);
  EXPECT_EQ(toy.model.recursions, 2);
  EXPECT_EQ(toy.model.embed_dim, 8);
  EXPECT_EQ(toy.model.window, 2);
  EXPECT_DOUBLE_EQ(toy.train.lr, 1e-3);
  EXPECT_EQ(toy.train.batch_size, TrainConfig{}.batch_size);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(run_config_from({{"depth", "3"}}), std::invalid_argument);
  EXPECT_THROW(run_config_from({{"N", "three"}}), std::invalid_argument);
  EXPECT_THROW(run_config_from({{"recursion_input", "sideways"}}), std::invalid_argument);
  EXPECT_THROW(run_config_from({{"heads", "5"}}), std::invalid_argument);  // 96 not divisible
  EXPECT_THROW(parse_key_values("no equals sign"), FormatError);
  EXPECT_THROW(parse_key_values("x = "), FormatError);
  EXPECT_THROW(read_key_values("/nonexistent/x.cfg"), IoError);
}

TEST(Config, KeyValuesRoundTrip) {
  ModelConfig m;
  m.rtb_count = 3;
  m.recursion_input = RecursionInput::Anchor;
  m.leaky_slope = 0.1 + 0.2;
  TrainConfig t;
  t.lr = 3e-4;
  t.seed = 77;
  std::string text;
  for (const auto& [k, v] : to_key_values(m)) text += k + " = " + v + "\n";
  for (const auto& [k, v] : to_key_values(t)) text += k + " = " + v + "\n";
  auto back = run_config_from(parse_key_values(text));
  EXPECT_EQ(back.model, m);
  EXPECT_EQ(back.train, t);
}

TEST(Config, ShippedConfigsLoad) {
  const fs::path dir = fs::path(DRT_FIXTURE_DIR).parent_path().parent_path() / "configs";
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".cfg") continue;
    EXPECT_NO_THROW(load_run_config(e.path())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 10);
  auto u1 = load_run_config(dir / "ablation_u1.cfg").model;
  EXPECT_NEAR(count_params(u1) / 1e6, 0.841, 0.00841);
}

#ifdef DRT_HAVE_CLI

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "drt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

fs::path toy_config_file(const fs::path& dir) {
  std::ofstream(dir / "toy.cfg") << "N = 1\nL = 2\nU = 1\nD = 8\nM = 2\nlr = 1e-3\nbatch_size = 2\ncrop = 8\n"
                                    "flip_prob = 0\nmax_epochs = 2\nplateau_window = 0\n";
  return dir / "toy.cfg";
}

void write_zero_head_checkpoint(const fs::path& path, Index window) {
  Checkpoint<float> ck;
  ck.config = drt::testing::toy_config();
  ck.config.window = window;
  ck.params = init_params<float>(ck.config, 3);
  for (auto* t : {&ck.params.reconstruct.weight, &ck.params.reconstruct.bias}) {
    std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.f);
  }
  save_checkpoint(path, ck);
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run_cli({}).code, cli::kUsage);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run_cli({"train", "--out", "x"}).code, cli::kUsage);  // missing --manifest
  EXPECT_EQ(run_cli({"synth", "--out-dir", "x"}).code, cli::kUsage);
  EXPECT_EQ(run_cli({"--help"}).code, cli::kOk);
  auto v = run_cli({"--version"});
  EXPECT_EQ(v.code, cli::kOk);
}

TEST(Cli, SynthFromCleanDir) {
  auto dir = scratch_dir("synth");
  fs::create_directories(dir / "clean");
  for (int i = 0; i < 4; ++i) save_image(dir / "clean" / ("img" + std::to_string(i) + ".png"), make_clean_scene(24, 20, i));
  auto r = run_cli({"synth", "--clean-dir", (dir / "clean").string(), "--out-dir", (dir / "a").string(), "--seed", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "a" / "pairs.tsv"), 4);
  EXPECT_EQ(read_manifest(dir / "a" / "pairs.tsv").size(), 4u);
  EXPECT_TRUE(fs::exists(dir / "a" / "run_manifest.json"));

  ASSERT_EQ(run_cli({"synth", "--clean-dir", (dir / "clean").string(), "--out-dir", (dir / "b").string(), "--seed", "4"}).code, 0);
  for (const auto& e : read_manifest(dir / "a" / "pairs.tsv")) {
    const auto twin = dir / "b" / fs::relative(e.degraded, dir / "a");
    EXPECT_EQ(file_bytes(e.degraded), file_bytes(twin)) << e.degraded;
  }
  EXPECT_EQ(file_bytes(dir / "a" / "pairs.tsv"), file_bytes(dir / "b" / "pairs.tsv"));

  ASSERT_EQ(run_cli({"synth", "--clean-dir", (dir / "clean").string(), "--out-dir", (dir / "dry").string(), "--intensity", "0"}).code, 0);
  for (const auto& e : read_manifest(dir / "dry" / "pairs.tsv")) {
    EXPECT_EQ(file_bytes(e.clean), file_bytes(e.degraded));
  }

  fs::create_directories(dir / "empty");
  auto empty = run_cli({"synth", "--clean-dir", (dir / "empty").string(), "--out-dir", (dir / "c").string()});
  EXPECT_EQ(empty.code, cli::kIo);
  EXPECT_FALSE(empty.err.empty());
  fs::remove_all(dir);
}

TEST(Cli, TrainInferEvalRoundTrip) {
  auto dir = scratch_dir("pipeline");
  ASSERT_EQ(run_cli({"synth", "--generate", "2", "--size", "12", "--out-dir", (dir / "data").string(), "--seed", "1"}).code, 0);
  const auto manifest = (dir / "data" / "pairs.tsv").string();
  const auto cfg = toy_config_file(dir).string();

  auto zero = run_cli({"train", "--manifest", manifest, "--config", cfg, "--out", (dir / "r0").string(), "--epochs", "0"});
  ASSERT_EQ(zero.code, 0) << zero.err;
  EXPECT_TRUE(fs::exists(dir / "r0" / "best.ckpt"));
  EXPECT_NO_THROW(load_checkpoint<float>(dir / "r0" / "best.ckpt"));

  for (const char* run : {"r1", "r2"}) {
    auto r = run_cli({"train", "--manifest", manifest, "--config", cfg, "--out", (dir / run).string(), "--seed", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("stop: max_epochs"), std::string::npos) << r.out;
  }
  EXPECT_EQ(file_bytes(dir / "r1" / "best.ckpt"), file_bytes(dir / "r2" / "best.ckpt"));
  EXPECT_EQ(file_bytes(dir / "r1" / "last.ckpt"), file_bytes(dir / "r2" / "last.ckpt"));
  EXPECT_EQ(count_lines(dir / "r1" / "train_log.jsonl"), 2);
  EXPECT_TRUE(fs::exists(dir / "r1" / "run_manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "r1" / "config.txt"));

  auto resumed = run_cli({"train", "--manifest", manifest, "--config", cfg, "--out", (dir / "r1").string(), "--seed", "3",
                          "--epochs", "3", "--resume"});
  ASSERT_EQ(resumed.code, 0) << resumed.err;
  EXPECT_EQ(count_lines(dir / "r1" / "train_log.jsonl"), 3);

  auto ev = run_cli({"eval", "--manifest", manifest, "--checkpoint", (dir / "r1" / "best.ckpt").string(), "--tsv",
                     (dir / "eval.tsv").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_EQ(count_lines(dir / "eval.tsv"), 1 + 2 + 1);  // header, pairs, mean
  EXPECT_NE(ev.out.find("mean"), std::string::npos);

  const auto img = read_manifest(manifest).front().degraded;
  auto inf = run_cli({"infer", "--checkpoint", (dir / "r1" / "best.ckpt").string(), "--input", img.string(), "--output",
                      (dir / "out" / "one.png").string()});
  ASSERT_EQ(inf.code, 0) << inf.err;
  EXPECT_EQ(load_image(dir / "out" / "one.png").shape(), load_image(img).shape());
  fs::remove_all(dir);
}

TEST(Cli, TrainRejectsMissingManifest) {
  auto dir = scratch_dir("train_io");
  EXPECT_EQ(run_cli({"train", "--manifest", (dir / "none.tsv").string(), "--out", (dir / "o").string()}).code, cli::kIo);
  std::ofstream(dir / "bad.cfg") << "nonsense_key = 1\n";
  std::ofstream(dir / "m.tsv") << "a.png\tb.png\n";
  EXPECT_EQ(run_cli({"train", "--manifest", (dir / "m.tsv").string(), "--config", (dir / "bad.cfg").string(), "--out",
                     (dir / "o").string()})
                .code,
            cli::kUsage);
  fs::remove_all(dir);
}

TEST(Cli, InferZeroHeadIsIdentityAtAnyResolution) {
  auto dir = scratch_dir("infer");
  write_zero_head_checkpoint(dir / "zero.ckpt", 7);
  fs::create_directories(dir / "in");
  save_image(dir / "in" / "big.png", make_clean_scene(100, 100, 5));
  save_image(dir / "in" / "odd.ppm", make_clean_scene(9, 13, 6));
  auto r = run_cli({"infer", "--checkpoint", (dir / "zero.ckpt").string(), "--input", (dir / "in").string(), "--output",
                    (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(file_bytes(dir / "in" / "big.png"), file_bytes(dir / "out" / "big.png"));
  EXPECT_EQ(load_image(dir / "out" / "big.png").shape(), (Shape{3, 100, 100}));
  EXPECT_EQ(file_bytes(dir / "in" / "odd.ppm"), file_bytes(dir / "out" / "odd.ppm"));

  std::string corrupt = file_bytes(dir / "zero.ckpt");
  corrupt[2] = '?';
  std::ofstream(dir / "bad.ckpt", std::ios::binary) << corrupt;
  auto bad = run_cli({"infer", "--checkpoint", (dir / "bad.ckpt").string(), "--input", (dir / "in").string(), "--output",
                      (dir / "out2").string()});
  EXPECT_EQ(bad.code, cli::kFormat);
  EXPECT_EQ(run_cli({"infer", "--checkpoint", (dir / "gone.ckpt").string(), "--input", (dir / "in").string(), "--output",
                     (dir / "out3").string()})
                .code,
            cli::kIo);
  fs::remove_all(dir);
}

TEST(Cli, TrainNonFiniteLossExitsNumeric) {
  auto dir = scratch_dir("nan");
  ASSERT_EQ(run_cli({"synth", "--generate", "2", "--size", "12", "--out-dir", (dir / "data").string()}).code, 0);
  const auto cfg = toy_config_file(dir).string();
  auto r = run_cli({"train", "--manifest", (dir / "data" / "pairs.tsv").string(), "--config", cfg, "--out",
                    (dir / "o").string(), "--lr", "1e30", "--epochs", "50"});
  EXPECT_EQ(r.code, cli::kNumeric) << r.out << r.err;
  fs::remove_all(dir);
}

TEST(Cli, EvalIdentityOnCleanPairs) {
  auto dir = scratch_dir("eval");
  ASSERT_EQ(run_cli({"synth", "--generate", "3", "--size", "16", "--out-dir", (dir / "d").string(), "--intensity", "0"}).code, 0);
  auto r = run_cli({"eval", "--manifest", (dir / "d" / "pairs.tsv").string(), "--identity", "--tsv", (dir / "e.tsv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(dir / "e.tsv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "id\tpsnr_db\tssim");
  int rows = 0;
  bool saw_mean = false;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string id;
    double db = 0, s = 0;
    std::getline(fields, id, '\t');
    fields >> db >> s;
    EXPECT_EQ(db, 100.0) << line;
    EXPECT_NEAR(s, 1.0, 1e-9) << line;
    if (id == "mean") saw_mean = true;
    else ++rows;
  }
  EXPECT_EQ(rows, 3);
  EXPECT_TRUE(saw_mean);
  EXPECT_NE(r.out.find("100.00"), std::string::npos) << r.out;

  EXPECT_EQ(run_cli({"eval", "--manifest", (dir / "d" / "pairs.tsv").string()}).code, cli::kUsage);
  std::ofstream(dir / "missing.tsv") << "nope.png\tnada.png\n";
  EXPECT_EQ(run_cli({"eval", "--manifest", (dir / "missing.tsv").string(), "--identity"}).code, cli::kIo);
  fs::remove_all(dir);
}

TEST(Cli, CountReportsPublishedFigures) {
  auto dir = scratch_dir("count");
  auto d = run_cli({"count"});
  ASSERT_EQ(d.code, 0) << d.err;
  EXPECT_NE(d.out.find("1.18"), std::string::npos);
  EXPECT_NE(d.out.find("within 1%"), std::string::npos);
  EXPECT_NE(d.out.find("56.51"), std::string::npos);
  EXPECT_NE(d.out.find("attention_scores"), std::string::npos);
  std::ofstream(dir / "u1.cfg") << "U = 1\n";
  auto u = run_cli({"count", "--config", (dir / "u1.cfg").string(), "--input-shape", "3x56x56"});
  ASSERT_EQ(u.code, 0) << u.err;
  EXPECT_NE(u.out.find("0.841"), std::string::npos) << u.out;
  EXPECT_NE(u.out.find("145108992"), std::string::npos);
  EXPECT_NE(u.out.find("2003828736"), std::string::npos);
  EXPECT_EQ(run_cli({"count", "--input-shape", "banana"}).code, cli::kUsage);
  fs::remove_all(dir);
}

#endif  // DRT_HAVE_CLI
