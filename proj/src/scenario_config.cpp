#include "tensegrity/scenario_config.hpp"

#include <cmath>
#include <fstream>

namespace tensegrity {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SuperballParams, rod_length, bar_stiffness, bar_damping,
                                                cable_stiffness, cable_damping, cable_rest_ratio, node_mass)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GroundModel, height, friction, stiffness, damping, slip_velocity)
}  // namespace tensegrity

namespace tensegrity::harness {

std::string to_string(ScenarioKind kind) { return kind == ScenarioKind::Local ? "local" : "global"; }

std::string to_string(Setting setting) {
  switch (setting) {
    case Setting::Full:
      return "full";
    case Setting::NoImu:
      return "no_imu";
    case Setting::FullConstOffset:
      return "full_const_offset";
    case Setting::Anchors4:
      return "anchors_4";
  }
  return "full";
}

// Unknown names are errors rather than silently mapping to a default.
void to_json(nlohmann::json& j, ScenarioKind k) { j = to_string(k); }
void from_json(const nlohmann::json& j, ScenarioKind& k) { k = parse_scenario(j.get<std::string>()); }
void to_json(nlohmann::json& j, Setting s) { j = to_string(s); }
void from_json(const nlohmann::json& j, Setting& s) { s = parse_setting(j.get<std::string>()); }

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, path, superball)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AnchorConfig, width, depth, corner_height, mid_height, positions,
                                                priors, reference_anchor, reference_side)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RangingConfig, round_rate, slot_spacing, distance_variance,
                                                timestamp_sigma, skew_ppm, clock_offset_max, quantum, offset_min,
                                                offset_max, nlos_probability, nlos_bias_mean,
                                                rejection_probability, power_threshold, loss_probability,
                                                mount_offset, radio)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SpuriousImu, time, bar, pitch_error, heading_error)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ImuConfig, angle_variance, spurious)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FilterConfig, rate, bundle_rate, alpha, beta, kappa, state_noise,
                                                velocity_noise, angle_noise, range_noise, initial_variance,
                                                angle_mode, init_window)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CalibrationConfig, offsets, samples, rounds_per_sample,
                                                pose_height_min,
                                                pose_height_max, pose_margin, min_internal_samples)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LocalScript, cables, amplitude, period, phase, step, start,
                                                actuated_endcap, unactuated_endcap)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RollEvent, time, cables, ratio, hold)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GlobalScript, rolls)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MetricsConfig, settle, settle_threshold, face_hysteresis,
                                                face_dwell, transition_tolerance, post_roll_delay, lag_window,
                                                lag_resolution, recovery_window)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScenarioConfig, scenario, setting, seed, duration, presettle,
                                                robot_start, sim_dt, truth_rate, max_spool_rate, ground, model,
                                                anchors, ranging, imu, filter, calibration, local, global, metrics)


ScenarioKind parse_scenario(const std::string& name) {
  if (name == "local") return ScenarioKind::Local;
  if (name == "global") return ScenarioKind::Global;
  throw ConfigError("unknown scenario '" + name + "' (expected local or global)");
}

Setting parse_setting(const std::string& name) {
  for (Setting s : {Setting::Full, Setting::NoImu, Setting::FullConstOffset, Setting::Anchors4}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown setting '" + name + "' (expected full, no_imu, full_const_offset or anchors_4)");
}

ScenarioConfig default_config(ScenarioKind kind) {
  ScenarioConfig c;
  c.scenario = kind;
  if (kind == ScenarioKind::Global) {
    c.duration = 70.0;
    c.imu.spurious = {SpuriousImu{}};
  }
  return c;
}

namespace {

void check_keys(const nlohmann::json& in, const nlohmann::json& ref, const std::string& path) {
  if (!in.is_object() || !ref.is_object()) return;
  for (const auto& [key, value] : in.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!ref.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    if (key == "radio") continue;
    const auto& r = ref.at(key);
    if (value.is_object()) {
      check_keys(value, r, where);
    } else if (value.is_array() && r.is_array()) {
      nlohmann::json element_ref = r.empty() ? nlohmann::json() : r.front();
      if (where == "global.rolls") element_ref = nlohmann::json(RollEvent{});
      if (where == "imu.spurious") element_ref = nlohmann::json(SpuriousImu{});
      for (const auto& e : value) check_keys(e, element_ref, where + "[]");
    }
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

void validate(const ScenarioConfig& c) {
  require(c.duration > 0.0, "duration must be positive");
  require(c.presettle >= 0.0, "presettle must be non-negative");
  require(c.sim_dt > 0.0 && c.sim_dt <= 0.01, "sim_dt must lie in (0, 0.01]");
  require(c.truth_rate > 0.0, "truth_rate must be positive");
  require(c.max_spool_rate > 0.0, "max_spool_rate must be positive");
  require(c.ranging.round_rate > 0.0 && c.ranging.slot_spacing > 0.0, "ranging rates must be positive");
  require(c.ranging.distance_variance >= 0.0, "distance_variance must be non-negative");
  require(c.ranging.offset_max >= c.ranging.offset_min, "offset range is empty");
  require(c.ranging.mount_offset >= 0.0, "mount_offset must be non-negative");
  require(std::abs(c.ranging.skew_ppm) < 1000.0, "skew_ppm must be below 1000");
  require(c.filter.rate > 0.0 && c.filter.bundle_rate > 0.0, "filter rates must be positive");
  require(c.filter.initial_variance > 0.0, "initial_variance must be positive");
  require(c.filter.angle_mode == "pitch" || c.filter.angle_mode == "pitch_heading",
          "angle_mode must be pitch or pitch_heading");
  require(c.imu.angle_variance >= 0.0, "imu angle_variance must be non-negative");
  require(c.calibration.offsets == "calibrated" || c.calibration.offsets == "true",
          "calibration.offsets must be calibrated or true");
  require(c.calibration.samples > 0, "calibration.samples must be positive");
  require(c.calibration.rounds_per_sample > 0 &&
              c.calibration.rounds_per_sample <= static_cast<int>(c.ranging.round_rate),
          "calibration.rounds_per_sample must lie in [1, round_rate]");
  require(c.anchors.priors.size() >= 3, "at least three anchor priors are required");
  require(c.anchors.reference_side == 1 || c.anchors.reference_side == -1, "reference_side must be +1 or -1");
  const int na = static_cast<int>(anchor_positions(c.anchors).size());
  require(na >= 4, "at least four anchors are required");
  for (int p : c.anchors.priors) require(p >= 0 && p < na, "anchor prior index out of range");
  require(c.anchors.reference_anchor >= 0 && c.anchors.reference_anchor < na, "reference anchor out of range");
  require(c.local.step > 0.0 && c.local.period > 0.0, "local script timing must be positive");
  require(c.local.amplitude >= 0.0 && c.local.amplitude < 1.0, "local amplitude must lie in [0, 1)");
  for (const auto& r : c.global.rolls) {
    require(r.ratio > 0.0 && r.ratio <= 1.0, "roll ratio must lie in (0, 1]");
    require(r.hold >= 0.0, "roll hold must be non-negative");
  }
  require(c.metrics.settle >= 0.0, "metrics.settle must be non-negative");
}

nlohmann::json to_json(const ScenarioConfig& config) { return nlohmann::json(config); }

ScenarioConfig from_json(const nlohmann::json& j, const ScenarioConfig& base) {
  nlohmann::json merged = to_json(base);
  check_keys(j, merged, "");
  merged.merge_patch(j);
  try {
    ScenarioConfig c = merged.get<ScenarioConfig>();
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

ScenarioConfig load_config(const std::string& path, const ScenarioConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return from_json(nlohmann::json::parse(in), base);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::vector<Eigen::Vector3d> anchor_positions(const AnchorConfig& c) {
  std::vector<Eigen::Vector3d> out;
  if (!c.positions.empty()) {
    for (const auto& p : c.positions) out.emplace_back(p[0], p[1], p[2]);
    return out;
  }
  const double x = c.width / 2.0;
  const double y = c.depth / 2.0;
  const double hi = c.corner_height;
  const double lo = c.mid_height;
  return {{-x, -y, hi}, {0.0, -y, lo}, {x, -y, hi}, {x, 0.0, lo},
          {x, y, hi},   {0.0, y, lo},  {-x, y, hi}, {-x, 0.0, lo}};
}

LoadedModel load_model(const ModelConfig& config) {
  if (!config.path.empty()) return read_model_file(config.path);
  const Superball sb = build_superball(config.superball);
  return {sb.model, sb.nominal_nodes, sb.closed_faces.front()};
}

LoadedModel read_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model " + path);
  try {
    const auto j = nlohmann::json::parse(in);
    const auto& nodes = j.at("nodes");
    const int n = static_cast<int>(nodes.size());
    NodeMatrix nominal(n, 3);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) nominal(i, c) = nodes.at(i).at(c).get<double>();
    std::vector<std::pair<int, int>> edges;
    std::vector<MemberProperties> members;
    for (const auto& m : j.at("members")) {
      const std::string kind = m.at("kind").get<std::string>();
      if (kind != "bar" && kind != "cable") throw ConfigError(path + ": member kind must be bar or cable");
      edges.emplace_back(m.at("nodes").at(0).get<int>(), m.at("nodes").at(1).get<int>());
      MemberProperties p;
      p.kind = kind == "bar" ? MemberKind::Bar : MemberKind::Cable;
      p.stiffness = m.at("stiffness").get<double>();
      p.damping = m.value("damping", 0.0);
      p.rest_length = m.at("rest_length").get<double>();
      p.actuated = m.value("actuated", false);
      members.push_back(p);
    }
    std::vector<double> masses = j.at("masses").get<std::vector<double>>();
    LoadedModel out{TensegrityModel::from_edges(n, edges, std::move(members), std::move(masses)), nominal, {0, 1, 2}};
    if (j.contains("base_face")) out.base_face = j["base_face"].get<std::array<int, 3>>();
    require_valid(out.model);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace tensegrity::harness
