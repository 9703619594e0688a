#pragma once

#include <string>

#include "tensegrity/harness.hpp"

namespace tensegrity::harness {

/// One JSON object per filter step and end cap:
/// {"t", "endcap", "true": [x,y,z], "est": [x,y,z], "var", "cov_trace", "measurements"}.
void write_trajectory_jsonl(const std::string& path, const ScenarioData& data, const ScenarioResult& result);

/// Columns t,endcap_id,x_true,y_true,z_true,x_est,y_est,z_est.
void write_trajectory_csv(const std::string& path, const ScenarioData& data, const ScenarioResult& result);

void write_metrics_json(const std::string& path, const ScenarioResult& result);
void write_metrics_csv(const std::string& path, const ScenarioResult& result);
void write_config(const std::string& path, const ScenarioConfig& config);

/// trajectory.jsonl, trajectory.csv, metrics.json, metrics.csv,
/// config_used.json and calibration.json in `dir` (created if missing).
void write_run(const std::string& dir, const ScenarioData& data, const ScenarioResult& result);

}  // namespace tensegrity::harness
