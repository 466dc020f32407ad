#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "hafed/federation.hpp"

namespace hafed {

// Invalid or unreadable configuration; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parse a config document (all fields optional, defaults applied), then
// validate. Unknown keys are rejected so typos cannot silently no-op.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

// Fully resolved round-trip of the effective configuration.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

}  // namespace hafed
