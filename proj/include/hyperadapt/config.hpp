#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hyperadapt/model.hpp"
#include "hyperadapt/task.hpp"
#include "hyperadapt/train.hpp"

namespace hyperadapt {

/// Invalid config text or values. `where` is "file:line" or "override 'k=v'".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(where) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

// ---------------------------------------------------------------------------
// Text layer: "[table]" headers and "key = value" lines, '#' comments.
// Values: "string", integer, float, true/false, or a flat [array].

struct ConfigValue;
using ConfigArray = std::vector<ConfigValue>;

struct ConfigValue {
  std::variant<std::string, std::int64_t, double, bool, ConfigArray> data;
  bool operator==(const ConfigValue&) const = default;
};

struct ConfigEntry {
  std::string key;
  ConfigValue value;
  std::string where;
};

struct ConfigTable {
  std::string name;
  std::string where;
  std::vector<ConfigEntry> entries;
};

struct ConfigDocument {
  std::vector<ConfigTable> tables;
  ConfigTable& table(const std::string& name);
};

ConfigValue parse_config_value(std::string_view text, const std::string& where);
ConfigDocument parse_config_document(std::string_view text, const std::string& source = "<config>");
std::string emit_config_value(const ConfigValue& value);

// ---------------------------------------------------------------------------
// Typed experiment description.

struct StageSettings {
  bool enabled = true;
  std::size_t steps = 300;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  AdamWConfig optimizer;
  double clip_norm = 0.0;
  bool cosine_schedule = false;
  bool freeze_visual_expert = false;
  std::size_t final_window = 50;

  bool operator==(const StageSettings&) const = default;

  static StageSettings align_defaults();
  static StageSettings instruct_defaults();
};

struct SweepAxes {
  // Empty axis: use the [model] value.
  std::vector<ProjectorVariant> variants;
  std::vector<PlacementPreset> placements;
  std::vector<std::size_t> guidance_dims;
  std::vector<std::size_t> bottlenecks;

  bool operator==(const SweepAxes&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";
  std::size_t threads = 1;
  // Widen the FFN of expert-free points to the trainable count of the
  // reference dynamic arm below.
  bool param_match = false;
  ProjectorVariant match_variant = ProjectorVariant::V1;
  PlacementPreset match_placement = PlacementPreset::posterior_half;

  ModelSpec model;  // [model]; placement is a preset name or "custom"
  TaskConfig task;
  StageSettings align = StageSettings::align_defaults();
  StageSettings instruct = StageSettings::instruct_defaults();
  SweepAxes sweep;

  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig config_from_document(const ConfigDocument& doc);
ExperimentConfig parse_config(std::string_view text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
std::string emit_config(const ExperimentConfig& config);

/// Applies "table.key=value" overrides on top of `text`.
ExperimentConfig parse_config_with_overrides(std::string_view text, const std::string& source,
                                             const std::vector<std::string>& overrides);

TrainPlan make_plan(Stage stage, const StageSettings& settings);

}  // namespace hyperadapt
