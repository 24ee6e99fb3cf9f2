#pragma once

#include "petbench/models/model.hpp"
#include "petbench/train.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace petbench {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a run needs. Built by merging JSON layers (defaults, profile,
/// config file, command-line flags) and validated before any work starts.
struct RunConfig {
  std::vector<ModelKind> models;  // empty means all eleven
  TrainConfig train;
  std::filesystem::path data_dir = "data/desk";
  Index train_subset = 6000;  // 0 keeps the whole split
  Index test_subset = 1000;
  Index val_size = 0;  // 0 holds out train_size / 12
  std::filesystem::path output_dir = "runs";
  // Per-family overrides keyed by display name, e.g. {"JEM": {"jem": {...}}}.
  std::map<ModelKind, nlohmann::json> overrides;
};

enum class Profile { desk, full };

/// Default values of `profile` as a JSON object with every recognized key.
/// full: whole splits, 50 epochs, early stopping.
nlohmann::json default_config_json(Profile profile = Profile::desk);

/// Merges `layers` left to right (later objects win key by key; nested
/// objects merge), then parses. Throws ConfigError naming the key for
/// unknown keys, wrong types and out-of-range values.
RunConfig resolve_config(const std::vector<nlohmann::json>& layers);
RunConfig parse_config(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);

/// Reads a JSON config file; errors carry the path.
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Table architecture for `kind` with the config's overrides applied.
ModelSpec model_spec(const RunConfig& config, ModelKind kind);
/// Shared protocol plus family adjustments and overrides.
TrainConfig train_config(const RunConfig& config, ModelKind kind);
std::vector<ModelKind> selected_models(const RunConfig& config);

/// Dataset root: PETBENCH_DATA when set, else `fallback`.
std::filesystem::path data_root_from_env(const std::filesystem::path& fallback);

}  // namespace petbench
