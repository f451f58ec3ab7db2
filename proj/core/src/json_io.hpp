#pragma once

// Private JSON bridging shared by config and trace code. Public headers
// stay free of the vendored json dependency.

#include <json.hpp>

#include "agpo/config.hpp"
#include "agpo/trace.hpp"

namespace agpo::detail {

nlohmann::json run_config_to_json(const RunConfig& cfg);
// Strict: unknown keys raise ConfigError. `where` prefixes error messages.
RunConfig run_config_from_json(const nlohmann::json& j,
                               const std::string& where);

nlohmann::json step_record_to_json(const StepRecord& rec);
StepRecord step_record_from_json(const nlohmann::json& j);

nlohmann::json metadata_to_json(const TraceMetadata& meta);
TraceMetadata metadata_from_json(const nlohmann::json& j);

}  // namespace agpo::detail
