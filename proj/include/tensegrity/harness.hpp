#pragma once

#include <map>
#include <string>
#include <vector>

#include "tensegrity/calibration.hpp"
#include "tensegrity/dynamics.hpp"
#include "tensegrity/metrics.hpp"
#include "tensegrity/ranging.hpp"
#include "tensegrity/scenario_config.hpp"
#include "tensegrity/tensegrity_filter.hpp"
#include "tensegrity/ukf.hpp"

namespace tensegrity::harness {

/// Independent random stream `stream` of a run seeded with `seed`.
ranging::Rng make_rng(std::uint64_t seed, std::uint64_t stream);

/// Anchor ids follow the end caps: node_count, node_count + 1, ...
std::vector<int> anchor_ids(int node_count, int anchor_count);

/// Actuated rest-length targets of the scripted scenario at time t.
Eigen::VectorXd script_targets(const ScenarioConfig& config, const Eigen::VectorXd& base, double t);

/// Shape the model settles into when resting on `face` without actuation.
NodeMatrix settled_shape(const Dynamics& dynamics, const NodeMatrix& nominal, const std::array<int, 3>& face,
                         double duration, double dt);

struct TruthRun {
  double dt = 1e-3;
  std::vector<NodeMatrix> positions;       // every integration step, t = k dt
  std::vector<Eigen::VectorXd> commands;   // spool rest lengths applied during step k -> k+1
  NodeMatrix position_at(double t) const;  // nearest stored step
  Eigen::VectorXd command_at(double t) const;
};

/// Presettles on the base face, moves to the start point and runs the script.
TruthRun simulate_truth(const ScenarioConfig& config, const Dynamics& dynamics, const NodeMatrix& nominal,
                        const std::array<int, 3>& base_face);

struct RadioNetwork {
  std::vector<int> endcap_ids;
  std::vector<int> anchor_ids;
  std::map<int, Eigen::Vector3d> anchors;  // true positions
  std::map<int, ranging::ClockModel> clocks;
  ranging::OffsetTable true_offsets;
  ranging::BroadcastConfig broadcast;
};

RadioNetwork make_network(const ScenarioConfig& config, int node_count, ranging::Rng& rng);

/// One broadcast round with end-cap sensors at `nodes`. Measurements carry
/// raw values; `corrected` equals `raw`.
ranging::BroadcastRound range_round(const RadioNetwork& net, const TensegrityModel& model, const NodeMatrix& nodes,
                                    double mount_offset, double start, ranging::Rng& rng);

struct CalibrationSession {
  std::vector<ranging::RangingMeasurement> log;
  std::vector<NodeMatrix> poses;
  calibration::CalibrationDataset dataset;
  calibration::Priors priors;
  calibration::CalibrationFile file;
};

/// Ranging log of the robot held in random poses: pose k occupies [k, k + 1) s
/// and is ranged `rounds_per_sample` times. The node positions of every pose are
/// appended to `poses` when given.
std::vector<ranging::RangingMeasurement> calibration_log(const ScenarioConfig& config, const RadioNetwork& net,
                                                         const TensegrityModel& model, const NodeMatrix& shape,
                                                         ranging::Rng& rng, std::vector<NodeMatrix>* poses = nullptr);

/// Dataset with the model's bars as rigid constraints between their sensors.
calibration::CalibrationDataset session_dataset(const ScenarioConfig& config, const RadioNetwork& net,
                                                const TensegrityModel& model, const NodeMatrix& shape,
                                                const std::vector<ranging::RangingMeasurement>& log);

calibration::Priors session_priors(const ScenarioConfig& config, const RadioNetwork& net,
                                   const calibration::CalibrationDataset& data);

CalibrationSession run_calibration_session(const ScenarioConfig& config, const RadioNetwork& net,
                                           const TensegrityModel& model, const NodeMatrix& shape,
                                           ranging::Rng& rng);

/// Everything shared by the settings of one scenario: the truth, the sensor
/// streams and the calibration. Settings only differ in what the filter sees.
struct ScenarioData {
  ScenarioConfig config;
  LoadedModel loaded;
  NodeMatrix rest_shape;
  TruthRun truth;
  Trajectory truth_trajectory;  // at config.truth_rate
  RadioNetwork network;
  std::vector<ranging::RangingMeasurement> measurements;
  std::vector<double> bundle_times;
  std::vector<std::vector<estimation::BarAngles>> imu;  // per bundle, per bar (noisy)
  CalibrationSession calibration;  // the raw session log is not kept
  std::vector<double> spurious_bundle_times;
  std::vector<std::string> warnings;
};

ScenarioData prepare_scenario(const ScenarioConfig& config);

struct ScenarioResult {
  ScenarioConfig config;
  Setting setting = Setting::Full;
  double filter_start = 0.0;
  EstimateTrajectory estimate;
  std::vector<ukf::FilterStep> steps;
  RunMetrics metrics;
  std::map<int, Eigen::Vector3d> anchors_used;
  ranging::OffsetTable offsets_used;
  std::vector<std::string> warnings;
  double filter_seconds = 0.0;  // wall time of the filter run
};

/// Offset table the filter uses in a setting.
ranging::OffsetTable setting_offsets(const ScenarioData& data, Setting setting);

/// Measurement bundles for a setting, with ranges corrected by `offsets`.
std::vector<ukf::MeasurementBundle> setting_bundles(const ScenarioData& data, Setting setting,
                                                    const ranging::OffsetTable& offsets);

ScenarioResult run_setting(const ScenarioData& data, Setting setting);

/// prepare_scenario + run_setting(config.setting).
ScenarioResult run_scenario(const ScenarioConfig& config);

}  // namespace tensegrity::harness
