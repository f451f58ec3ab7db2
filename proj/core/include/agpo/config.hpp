#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "agpo/trainer.hpp"

namespace agpo {

inline constexpr const char* kConfigSchema = "agpo-config-v1";

// Everything an experiment needs: the run itself, where to write, and the
// ablation axes the sweep command crosses with the seed list.
struct ExperimentConfig {
  RunConfig run;
  std::string out_dir = "runs";
  std::vector<DispersionMode> sweep_dispersion_modes;
  std::vector<std::string> sweep_signals_masks;

  void validate() const;
};

// Defaults only; equivalent to parsing an empty config object.
ExperimentConfig default_experiment_config();

// Strict JSON parsing: unknown keys anywhere are a ConfigError, missing
// keys fall back to defaults.
ExperimentConfig parse_experiment_config_text(std::string_view text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

std::string experiment_config_to_text(const ExperimentConfig& cfg);

}  // namespace agpo
