#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "second_opinion/data.hpp"
#include "second_opinion/eval.hpp"

namespace second_opinion {

struct DataSource {
  std::optional<std::filesystem::path> path;  // resolved against the config file's directory
  std::vector<std::string> feature_columns;
  bool features_are_rest = false;  // "rest": every column not otherwise claimed
  std::vector<std::string> expert_columns;
  std::optional<std::string> case_id_column;
  std::vector<std::string> ignore_columns;
  std::optional<SyntheticSpec> synthetic;
};

/// A fully validated run configuration. Parsing rejects unknown keys and
/// out-of-range values with ConfigError before any computation starts.
struct RunConfig {
  DataSource data;
  ExperimentConfig experiment;
  std::filesystem::path output_dir = "out";  // relative to the working directory
};

nlohmann::json read_config_file(const std::filesystem::path& path);

/// Applies "dotted.key=value" to a config document. The value is parsed as
/// JSON when possible and kept as a string otherwise. Only scalar leaves may
/// be overridden.
void apply_override(nlohmann::json& doc, const std::string& assignment);

RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

/// Canonical document with every default filled in; written to run_meta.json
/// and hashed into the config fingerprint.
nlohmann::json resolved_config(const RunConfig& config);

SyntheticSpec parse_synthetic_spec(const nlohmann::json& j);
nlohmann::json synthetic_spec_json(const SyntheticSpec& spec);

/// Loads (or generates) the panel the config describes.
PanelDataset load_panel(const DataSource& source);

}  // namespace second_opinion
