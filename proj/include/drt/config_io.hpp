#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "drt/model.hpp"
#include "drt/rain.hpp"
#include "drt/training.hpp"

namespace drt {

/// Parsed "key = value" file. '#' starts a comment; blank lines are ignored.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text, const std::string& source = "<config>");
KeyValues read_key_values(const std::filesystem::path& path);

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Applies recognised keys over the reference defaults. Model keys accept the
/// short aliases N, L, U, D, M, P. Unknown keys are rejected.
RunConfig run_config_from(const KeyValues& kv);
RunConfig load_run_config(const std::filesystem::path& path);

/// Every field, in a stable order, ready to write back as key = value.
std::vector<std::pair<std::string, std::string>> to_key_values(const ModelConfig& config);
std::vector<std::pair<std::string, std::string>> to_key_values(const TrainConfig& config);
std::vector<std::pair<std::string, std::string>> to_key_values(const RainParams& params);

std::string recursion_input_name(RecursionInput mode);

}  // namespace drt
