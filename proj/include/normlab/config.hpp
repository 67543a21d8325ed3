#pragma once

#include <string>

#include <json.hpp>

#include "normlab/experiments.hpp"

namespace normlab {

// Config files are UTF-8 JSON mirroring the config structs in snake_case.
// Unknown keys are rejected, missing keys keep their defaults.

TrainConfig train_config_from_json(const nlohmann::json& j);
SweepConfig sweep_config_from_json(const nlohmann::json& j);
TraceConfig trace_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& cfg);

TrainConfig load_train_config(const std::string& path);
SweepConfig load_sweep_config(const std::string& path);
TraceConfig load_trace_config(const std::string& path);

}  // namespace normlab
