#include "tensegrity/export.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace tensegrity::harness {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_trajectory_jsonl(const std::string& path, const ScenarioData& data, const ScenarioResult& result) {
  auto out = open_out(path);
  const auto& est = result.estimate;
  for (std::size_t k = 0; k < est.time.size(); ++k) {
    const NodeMatrix truth = interpolate(data.truth_trajectory, est.time[k]);
    for (int i = 0; i < truth.rows(); ++i) {
      out << "{\"t\":" << fmt(est.time[k]) << ",\"endcap\":" << i << ",\"true\":[" << fmt(truth(i, 0)) << ','
          << fmt(truth(i, 1)) << ',' << fmt(truth(i, 2)) << "],\"est\":[" << fmt(est.nodes[k](i, 0)) << ','
          << fmt(est.nodes[k](i, 1)) << ',' << fmt(est.nodes[k](i, 2)) << "],\"var\":"
          << fmt(est.node_variance[k](i)) << ",\"cov_trace\":" << fmt(est.cov_trace[k])
          << ",\"measurements\":" << result.steps[k].measurement_count << "}\n";
    }
  }
}

void write_trajectory_csv(const std::string& path, const ScenarioData& data, const ScenarioResult& result) {
  auto out = open_out(path);
  out << "t,endcap_id,x_true,y_true,z_true,x_est,y_est,z_est\n";
  const auto& est = result.estimate;
  for (std::size_t k = 0; k < est.time.size(); ++k) {
    const NodeMatrix truth = interpolate(data.truth_trajectory, est.time[k]);
    for (int i = 0; i < truth.rows(); ++i) {
      out << fmt(est.time[k]) << ',' << i << ',' << fmt(truth(i, 0)) << ',' << fmt(truth(i, 1)) << ','
          << fmt(truth(i, 2)) << ',' << fmt(est.nodes[k](i, 0)) << ',' << fmt(est.nodes[k](i, 1)) << ','
          << fmt(est.nodes[k](i, 2)) << '\n';
    }
  }
}

void write_metrics_json(const std::string& path, const ScenarioResult& result) {
  nlohmann::json j = to_json(result.metrics);
  j["scenario"] = to_string(result.config.scenario);
  j["setting"] = to_string(result.setting);
  j["seed"] = result.config.seed;
  j["filter_start"] = result.filter_start;
  j["warnings"] = result.warnings;
  open_out(path) << j.dump(2) << '\n';
}

void write_metrics_csv(const std::string& path, const ScenarioResult& result) {
  open_out(path) << to_csv(result.metrics);
}

void write_config(const std::string& path, const ScenarioConfig& config) {
  open_out(path) << to_json(config).dump(2) << '\n';
}

void write_run(const std::string& dir, const ScenarioData& data, const ScenarioResult& result) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  write_trajectory_jsonl((d / "trajectory.jsonl").string(), data, result);
  write_trajectory_csv((d / "trajectory.csv").string(), data, result);
  write_metrics_json((d / "metrics.json").string(), result);
  write_metrics_csv((d / "metrics.csv").string(), result);
  write_config((d / "config_used.json").string(), result.config);
  calibration::write_calibration_file((d / "calibration.json").string(), data.calibration.file);
}

}  // namespace tensegrity::harness
