#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tensegrity/dynamics.hpp"
#include "tensegrity/structure.hpp"

namespace tensegrity::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ScenarioKind { Local, Global };
enum class Setting { Full, NoImu, FullConstOffset, Anchors4 };

std::string to_string(ScenarioKind kind);
std::string to_string(Setting setting);
ScenarioKind parse_scenario(const std::string& name);
Setting parse_setting(const std::string& name);

struct ModelConfig {
  std::string path;  // empty selects the built-in six-strut model
  SuperballParams superball;
};

/// Default: 8 anchors on a 10.4 x 8.75 m rectangle (91 m^2), walking the
/// perimeter corner, edge midpoint, corner, ... Corners are high, midpoints low.
struct AnchorConfig {
  double width = 10.4;
  double depth = 8.75;
  double corner_height = 2.4;
  double mid_height = 0.4;
  /// Explicit positions override the rectangle when non-empty.
  std::vector<std::array<double, 3>> positions;
  /// Indices (into the anchor list) with known positions, and the anchor used
  /// to pick the reflection.
  std::vector<int> priors{0, 2, 4};
  int reference_anchor = 1;
  int reference_side = -1;
};

struct RangingConfig {
  double round_rate = 15.0;  // Hz
  double slot_spacing = 1e-3;
  /// Target range variance; sets the timestamp noise unless timestamp_sigma >= 0.
  double distance_variance = 0.029;
  double timestamp_sigma = -1.0;
  double skew_ppm = 20.0;
  double clock_offset_max = 1.0;  // s
  double quantum = 15.65e-12;
  double offset_min = 0.0;  // true pairwise distance offsets ~ U(min, max)
  double offset_max = 0.5;
  double nlos_probability = 0.05;
  double nlos_bias_mean = 0.5;
  double rejection_probability = 0.3;
  double power_threshold = 0.5;
  double loss_probability = 0.0;
  double mount_offset = 0.1;
  /// Radio configuration, carried for reference only.
  nlohmann::json radio = {{"data_rate", "6.8 Mb/s"}, {"channel", 7}, {"preamble_length", 256},
                          {"prf", "64 MHz"}, {"preamble_code", 17}};
};

struct SpuriousImu {
  double time = 60.0;
  int bar = 0;
  double pitch_error = 1.2;    // rad
  double heading_error = 2.5;  // rad
};

struct ImuConfig {
  double angle_variance = 0.1;  // rad^2
  std::vector<SpuriousImu> spurious;
};

struct FilterConfig {
  double rate = 10.0;         // predict rate, Hz
  double bundle_rate = 10.0;  // measurement aggregation rate, Hz
  double alpha = 0.0139;
  double beta = 2.0;
  double kappa = 0.0;
  // The library default of 0.4 keeps the local scenario near 0.5 m RMS; see README.
  double state_noise = 1e-4;
  double velocity_noise = -1.0;
  double angle_noise = 0.1;
  double range_noise = 0.029;
  double initial_variance = 0.01;
  std::string angle_mode = "pitch_heading";
  double init_window = 0.5;  // s of ranges merged for the initial fit
};

struct CalibrationConfig {
  /// "calibrated": run a synthetic calibration session; "true": use the
  /// simulator's anchors and offsets.
  std::string offsets = "calibrated";
  int samples = 400;
  int rounds_per_sample = 15;  // broadcast rounds per held pose, averaged into one sample
  double pose_height_min = 0.8;  // pose centroid height range, m
  double pose_height_max = 1.5;
  double pose_margin = 1.5;  // keep poses this far inside the anchor rectangle
  int min_internal_samples = 20;
};

struct LocalScript {
  std::vector<int> cables{2, 7};  // indices into the actuated list
  double amplitude = 0.35;        // peak shortening as a fraction of rest length
  double period = 8.0;            // s
  double phase = 1.5707963267948966;
  double step = 0.5;  // s, commands are held piecewise constant
  double start = 2.0;
  int actuated_endcap = 7;
  int unactuated_endcap = 6;
};

struct RollEvent {
  double time = 0.0;
  std::vector<int> cables;
  double ratio = 0.4;  // contracted rest length as a fraction of the default
  double hold = 5.0;
};

struct GlobalScript {
  std::vector<RollEvent> rolls{{12.0, {0}, 0.4, 5.0}, {27.0, {1, 2}, 0.4, 5.0}, {42.0, {2}, 0.4, 5.0}};
};

struct MetricsConfig {
  double settle = 10.0;  // s after filter start excluded from RMS
  double settle_threshold = 0.1;
  double face_hysteresis = 0.03;  // m
  double face_dwell = 0.5;        // s
  double transition_tolerance = 3.0;
  double post_roll_delay = 6.0;  // s after a roll's release before centroids are scored
  double lag_window = 1.0;
  double lag_resolution = 0.005;
  double recovery_window = 5.0;
};

struct ScenarioConfig {
  ScenarioKind scenario = ScenarioKind::Local;
  Setting setting = Setting::Full;
  std::uint64_t seed = 1;
  double duration = 60.0;
  double presettle = 20.0;  // s of unactuated settling before t = 0
  std::array<double, 2> robot_start{-2.0, 0.0};
  double sim_dt = 1e-3;
  double truth_rate = 100.0;
  double max_spool_rate = 0.2;  // m/s
  GroundModel ground;
  ModelConfig model;
  AnchorConfig anchors;
  RangingConfig ranging;
  ImuConfig imu;
  FilterConfig filter;
  CalibrationConfig calibration;
  LocalScript local;
  GlobalScript global;
  MetricsConfig metrics;
};

/// Defaults for a scenario (the global scenario runs longer and injects a
/// spurious IMU sample at t = 60 s).
ScenarioConfig default_config(ScenarioKind kind);

void validate(const ScenarioConfig& config);

nlohmann::json to_json(const ScenarioConfig& config);
/// Fields missing from `j` keep the values of `base`. Unknown keys are errors.
ScenarioConfig from_json(const nlohmann::json& j, const ScenarioConfig& base);
ScenarioConfig load_config(const std::string& path, const ScenarioConfig& base);

/// Anchor positions in list order.
std::vector<Eigen::Vector3d> anchor_positions(const AnchorConfig& config);

/// A model plus its nominal node positions.
struct LoadedModel {
  TensegrityModel model;
  NodeMatrix nominal;
  /// Resting face used to place the model before settling.
  std::array<int, 3> base_face{0, 1, 2};
};

LoadedModel load_model(const ModelConfig& config);

/// Model file: {"nodes": [[x,y,z],...], "masses": [...], "members": [{"kind":
/// "bar"|"cable", "nodes": [a, b], "stiffness", "damping", "rest_length",
/// "actuated"}], "base_face": [a, b, c]}.
LoadedModel read_model_file(const std::string& path);

}  // namespace tensegrity::harness
