#include "drt/config_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "drt/errors.hpp"

namespace drt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& value) {
  Int out{};
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    throw std::invalid_argument("config key '" + key + "': expected an integer, got '" + value + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    throw std::invalid_argument("config key '" + key + "': expected a number, got '" + value + "'");
  }
  return out;
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": empty key or value");
    }
    kv[key] = value;
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

std::string recursion_input_name(RecursionInput mode) {
  return mode == RecursionInput::Previous ? "previous" : "anchor";
}

RunConfig run_config_from(const KeyValues& kv) {
  RunConfig rc;
  ModelConfig& m = rc.model;
  TrainConfig& t = rc.train;
  for (const auto& [key, value] : kv) {
    if (key == "rtb_count" || key == "N") m.rtb_count = parse_int<std::int64_t>(key, value);
    else if (key == "recursions" || key == "L") m.recursions = parse_int<std::int64_t>(key, value);
    else if (key == "blocks_per_rtb" || key == "U") m.blocks_per_rtb = parse_int<std::int64_t>(key, value);
    else if (key == "embed_dim" || key == "D") m.embed_dim = parse_int<std::int64_t>(key, value);
    else if (key == "heads") m.heads = parse_int<std::int64_t>(key, value);
    else if (key == "window" || key == "M") m.window = parse_int<std::int64_t>(key, value);
    else if (key == "patch" || key == "P") m.patch = parse_int<std::int64_t>(key, value);
    else if (key == "mlp_ratio") m.mlp_ratio = parse_double(key, value);
    else if (key == "kernel") m.kernel = parse_int<std::int64_t>(key, value);
    else if (key == "channels") m.channels = parse_int<std::int64_t>(key, value);
    else if (key == "tail_convs") m.tail_convs = parse_int<std::int64_t>(key, value);
    else if (key == "leaky_slope") m.leaky_slope = parse_double(key, value);
    else if (key == "recursion_input") {
      if (value == "previous") m.recursion_input = RecursionInput::Previous;
      else if (value == "anchor") m.recursion_input = RecursionInput::Anchor;
      else throw std::invalid_argument("config key 'recursion_input': expected previous or anchor");
    }
    else if (key == "lr") t.lr = parse_double(key, value);
    else if (key == "batch_size") t.batch_size = parse_int<std::int64_t>(key, value);
    else if (key == "crop") t.crop = parse_int<std::int64_t>(key, value);
    else if (key == "flip_prob") t.flip_prob = parse_double(key, value);
    else if (key == "beta1") t.beta1 = parse_double(key, value);
    else if (key == "beta2") t.beta2 = parse_double(key, value);
    else if (key == "adam_eps") t.adam_eps = parse_double(key, value);
    else if (key == "max_epochs") t.max_epochs = parse_int<std::int64_t>(key, value);
    else if (key == "patience") t.patience = parse_int<std::int64_t>(key, value);
    else if (key == "plateau_window") t.plateau_window = parse_int<std::int64_t>(key, value);
    else if (key == "plateau_min_delta") t.plateau_min_delta = parse_double(key, value);
    else if (key == "seed") t.seed = parse_int<std::uint64_t>(key, value);
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
  m.validate();
  t.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from(read_key_values(path));
}

std::vector<std::pair<std::string, std::string>> to_key_values(const ModelConfig& m) {
  return {
      {"rtb_count", std::to_string(m.rtb_count)},
      {"recursions", std::to_string(m.recursions)},
      {"blocks_per_rtb", std::to_string(m.blocks_per_rtb)},
      {"embed_dim", std::to_string(m.embed_dim)},
      {"heads", std::to_string(m.heads)},
      {"window", std::to_string(m.window)},
      {"patch", std::to_string(m.patch)},
      {"mlp_ratio", format_double(m.mlp_ratio)},
      {"kernel", std::to_string(m.kernel)},
      {"channels", std::to_string(m.channels)},
      {"tail_convs", std::to_string(m.tail_convs)},
      {"leaky_slope", format_double(m.leaky_slope)},
      {"recursion_input", recursion_input_name(m.recursion_input)},
  };
}

std::vector<std::pair<std::string, std::string>> to_key_values(const TrainConfig& t) {
  return {
      {"lr", format_double(t.lr)},
      {"batch_size", std::to_string(t.batch_size)},
      {"crop", std::to_string(t.crop)},
      {"flip_prob", format_double(t.flip_prob)},
      {"beta1", format_double(t.beta1)},
      {"beta2", format_double(t.beta2)},
      {"adam_eps", format_double(t.adam_eps)},
      {"max_epochs", std::to_string(t.max_epochs)},
      {"patience", std::to_string(t.patience)},
      {"plateau_window", std::to_string(t.plateau_window)},
      {"plateau_min_delta", format_double(t.plateau_min_delta)},
      {"seed", std::to_string(t.seed)},
  };
}

std::vector<std::pair<std::string, std::string>> to_key_values(const RainParams& r) {
  return {
      {"count_min", std::to_string(r.count_min)},
      {"count_max", std::to_string(r.count_max)},
      {"angle_min", format_double(r.angle_min)},
      {"angle_max", format_double(r.angle_max)},
      {"length_min", format_double(r.length_min)},
      {"length_max", format_double(r.length_max)},
      {"width", format_double(r.width)},
      {"intensity_min", format_double(r.intensity_min)},
      {"intensity_max", format_double(r.intensity_max)},
      {"seed", std::to_string(r.seed)},
  };
}

}  // namespace drt
