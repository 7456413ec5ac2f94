#include "drt/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "drt/config_io.hpp"
#include "drt/errors.hpp"

namespace drt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

template <typename T>
void append_le(std::string& out, std::span<const T> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * sizeof(T));
  std::memcpy(out.data() + start, values.data(), values.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::reverse(out.begin() + start + i * sizeof(T), out.begin() + start + (i + 1) * sizeof(T));
    }
  }
}

template <typename T>
void read_le(const char* src, std::span<T> values) {
  std::memcpy(values.data(), src, values.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<char*>(values.data());
    for (std::size_t i = 0; i < values.size(); ++i) std::reverse(bytes + i * sizeof(T), bytes + (i + 1) * sizeof(T));
  }
}

json config_to_json(const ModelConfig& m) {
  return {{"rtb_count", m.rtb_count},   {"recursions", m.recursions}, {"blocks_per_rtb", m.blocks_per_rtb},
          {"embed_dim", m.embed_dim},   {"heads", m.heads},           {"window", m.window},
          {"patch", m.patch},           {"mlp_ratio", m.mlp_ratio},   {"kernel", m.kernel},
          {"channels", m.channels},     {"tail_convs", m.tail_convs}, {"leaky_slope", m.leaky_slope},
          {"recursion_input", recursion_input_name(m.recursion_input)}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig m;
  m.rtb_count = j.at("rtb_count").get<std::int64_t>();
  m.recursions = j.at("recursions").get<std::int64_t>();
  m.blocks_per_rtb = j.at("blocks_per_rtb").get<std::int64_t>();
  m.embed_dim = j.at("embed_dim").get<std::int64_t>();
  m.heads = j.at("heads").get<std::int64_t>();
  m.window = j.at("window").get<std::int64_t>();
  m.patch = j.at("patch").get<std::int64_t>();
  m.mlp_ratio = j.at("mlp_ratio").get<double>();
  m.kernel = j.at("kernel").get<std::int64_t>();
  m.channels = j.at("channels").get<std::int64_t>();
  m.tail_convs = j.at("tail_convs").get<std::int64_t>();
  m.leaky_slope = j.at("leaky_slope").get<double>();
  const auto mode = j.at("recursion_input").get<std::string>();
  if (mode == "previous") m.recursion_input = RecursionInput::Previous;
  else if (mode == "anchor") m.recursion_input = RecursionInput::Anchor;
  else throw FormatError("checkpoint: unknown recursion_input '" + mode + "'");
  m.validate();
  return m;
}

json train_to_json(const TrainConfig& t) {
  return {{"lr", t.lr},
          {"batch_size", t.batch_size},
          {"crop", t.crop},
          {"flip_prob", t.flip_prob},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"max_epochs", t.max_epochs},
          {"patience", t.patience},
          {"plateau_window", t.plateau_window},
          {"plateau_min_delta", t.plateau_min_delta},
          {"seed", t.seed}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.lr = j.at("lr").get<double>();
  t.batch_size = j.at("batch_size").get<std::int64_t>();
  t.crop = j.at("crop").get<std::int64_t>();
  t.flip_prob = j.at("flip_prob").get<double>();
  t.beta1 = j.at("beta1").get<double>();
  t.beta2 = j.at("beta2").get<double>();
  t.adam_eps = j.at("adam_eps").get<double>();
  t.max_epochs = j.at("max_epochs").get<std::int64_t>();
  t.patience = j.at("patience").get<std::int64_t>();
  t.plateau_window = j.at("plateau_window").get<std::int64_t>();
  t.plateau_min_delta = j.at("plateau_min_delta").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  return t;
}

struct ManifestRow {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
};

}  // namespace

template <typename T>
void save_checkpoint(const fs::path& path, const Checkpoint<T>& ck) {
  const auto named = named_parameters(ck.params);
  std::string blob;
  json tensors = json::array();
  auto add_tensor = [&](const std::string& name, const Shape& shape, std::span<const T> values) {
    tensors.push_back({{"name", name}, {"shape", shape}, {"offset", blob.size()}});
    append_le<T>(blob, values);
  };
  for (const auto& nt : named) add_tensor(nt.name, nt.tensor.shape(), nt.tensor.data());

  json header{{"format_version", kFormatVersion},
              {"dtype", dtype_name<T>()},
              {"seed", ck.seed},
              {"config", config_to_json(ck.config)}};
  if (ck.optimizer) {
    const auto& opt = *ck.optimizer;
    if (opt.first_moment.size() != named.size() || opt.second_moment.size() != named.size()) {
      throw DimensionError("save_checkpoint: optimizer state does not match parameters");
    }
    for (std::size_t i = 0; i < named.size(); ++i) add_tensor("adam.m." + named[i].name, named[i].tensor.shape(), opt.first_moment[i]);
    for (std::size_t i = 0; i < named.size(); ++i) add_tensor("adam.v." + named[i].name, named[i].tensor.shape(), opt.second_moment[i]);
    header["optimizer"] = {{"kind", "adam"}, {"step", opt.step}};
  }
  if (ck.train_config) header["train_config"] = train_to_json(*ck.train_config);
  if (ck.progress) {
    const auto& p = *ck.progress;
    header["progress"] = {{"epochs_completed", p.epochs_completed},
                          {"epoch_losses", p.epoch_losses},
                          {"best_loss", p.best_loss},
                          {"best_epoch", p.best_epoch}};
  }
  header["tensors"] = std::move(tensors);
  header["blob_bytes"] = blob.size();

  const std::string text = header.dump();
  const auto length = static_cast<std::uint32_t>(text.size());
  std::string prefix(kCheckpointMagic, 4);
  append_le<std::uint32_t>(prefix, std::span<const std::uint32_t>(&length, 1));

  // Write beside the target, then rename, so readers never see a partial file.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(prefix.data(), static_cast<std::streamsize>(prefix.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

struct RawCheckpoint {
  json header;
  std::string blob;
  std::vector<ManifestRow> rows;
};

RawCheckpoint read_raw(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw FormatError(path.string() + ": truncated checkpoint");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw FormatError(path.string() + ": bad magic, not a DRT1 checkpoint");
  std::uint32_t length = 0;
  read_le<std::uint32_t>(bytes.data() + 4, std::span<std::uint32_t>(&length, 1));
  if (bytes.size() < 8 + static_cast<std::size_t>(length)) throw FormatError(path.string() + ": truncated header");

  RawCheckpoint raw;
  try {
    raw.header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + length);
    if (raw.header.at("format_version").get<int>() != kFormatVersion) {
      throw FormatError(path.string() + ": unsupported format version");
    }
    for (const auto& t : raw.header.at("tensors")) {
      raw.rows.push_back({t.at("name").get<std::string>(), t.at("shape").get<Shape>(), t.at("offset").get<std::uint64_t>()});
    }
    const auto blob_bytes = raw.header.at("blob_bytes").get<std::uint64_t>();
    if (bytes.size() - 8 - length != blob_bytes) {
      throw FormatError(path.string() + ": blob is " + std::to_string(bytes.size() - 8 - length) +
                        " bytes, header declares " + std::to_string(blob_bytes));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed header: " + e.what());
  }
  raw.blob = bytes.substr(8 + length);
  return raw;
}

}  // namespace

template <typename T>
Checkpoint<T> load_checkpoint(const fs::path& path) {
  RawCheckpoint raw = read_raw(path);
  Checkpoint<T> ck;
  try {
    const auto dtype = raw.header.at("dtype").get<std::string>();
    if (dtype != dtype_name<T>()) {
      throw FormatError(path.string() + ": checkpoint holds " + dtype + ", requested " + dtype_name<T>());
    }
    ck.seed = raw.header.at("seed").get<std::uint64_t>();
    ck.config = config_from_json(raw.header.at("config"));
    if (raw.header.contains("train_config")) ck.train_config = train_from_json(raw.header.at("train_config"));
    if (raw.header.contains("progress")) {
      const auto& p = raw.header.at("progress");
      TrainProgress progress;
      progress.epochs_completed = p.at("epochs_completed").get<std::int64_t>();
      progress.epoch_losses = p.at("epoch_losses").get<std::vector<double>>();
      progress.best_loss = p.at("best_loss").get<double>();
      progress.best_epoch = p.at("best_epoch").get<std::int64_t>();
      ck.progress = std::move(progress);
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed header: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }

  ck.params = zero_params<T>(ck.config);
  auto named = named_parameters(ck.params);
  const bool has_optimizer = raw.header.contains("optimizer");
  const std::size_t expected_rows = named.size() * (has_optimizer ? 3 : 1);
  if (raw.rows.size() != expected_rows) {
    throw FormatError(path.string() + ": manifest lists " + std::to_string(raw.rows.size()) + " tensors, config implies " +
                      std::to_string(expected_rows));
  }

  std::uint64_t cursor = 0;
  auto take = [&](std::size_t row_index, const std::string& name, const Shape& shape, std::span<T> dest) {
    const ManifestRow& row = raw.rows[row_index];
    if (row.name != name || row.shape != shape) {
      throw FormatError(path.string() + ": manifest entry " + row.name + " " + shape_to_string(row.shape) +
                        " does not match expected " + name + " " + shape_to_string(shape));
    }
    const std::uint64_t bytes = dest.size() * sizeof(T);
    if (row.offset != cursor || row.offset + bytes > raw.blob.size()) {
      throw FormatError(path.string() + ": tensor " + name + " lies outside the blob");
    }
    read_le<T>(raw.blob.data() + row.offset, dest);
    cursor += bytes;
  };

  for (std::size_t i = 0; i < named.size(); ++i) take(i, named[i].name, named[i].tensor.shape(), named[i].tensor.mutable_data());
  if (has_optimizer) {
    OptimizerState<T> opt;
    try {
      opt.step = raw.header.at("optimizer").at("step").get<std::int64_t>();
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ": malformed optimizer header: " + e.what());
    }
    opt.first_moment.resize(named.size());
    opt.second_moment.resize(named.size());
    for (std::size_t i = 0; i < named.size(); ++i) {
      opt.first_moment[i].resize(static_cast<std::size_t>(named[i].tensor.numel()));
      take(named.size() + i, "adam.m." + named[i].name, named[i].tensor.shape(), opt.first_moment[i]);
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
      opt.second_moment[i].resize(static_cast<std::size_t>(named[i].tensor.numel()));
      take(2 * named.size() + i, "adam.v." + named[i].name, named[i].tensor.shape(), opt.second_moment[i]);
    }
    ck.optimizer = std::move(opt);
  }
  if (cursor != raw.blob.size()) throw FormatError(path.string() + ": trailing bytes after the last tensor");
  return ck;
}

std::int64_t checkpoint_parameter_count(const fs::path& path) {
  RawCheckpoint raw = read_raw(path);
  std::int64_t total = 0;
  for (const auto& row : raw.rows) {
    if (row.name.rfind("adam.", 0) == 0) continue;
    total += shape_numel(row.shape);
  }
  return total;
}

template void save_checkpoint(const fs::path&, const Checkpoint<float>&);
template void save_checkpoint(const fs::path&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint<float>(const fs::path&);
template Checkpoint<double> load_checkpoint<double>(const fs::path&);

}  // namespace drt
