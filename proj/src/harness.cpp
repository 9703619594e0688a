#include "tensegrity/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

namespace tensegrity::harness {

ranging::Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5eedu};
  return ranging::Rng(seq);
}

namespace {

enum Stream : std::uint64_t { kNetwork = 1, kRanging, kImu, kCalibration, kCalibrationSolve };

bool uses_imu(Setting s) { return s != Setting::NoImu; }

}  // namespace

std::vector<int> anchor_ids(int node_count, int anchor_count) {
  std::vector<int> ids(anchor_count);
  for (int k = 0; k < anchor_count; ++k) ids[k] = node_count + k;
  return ids;
}

Eigen::VectorXd script_targets(const ScenarioConfig& config, const Eigen::VectorXd& base, double t) {
  Eigen::VectorXd target = base;
  if (config.scenario == ScenarioKind::Local) {
    const LocalScript& s = config.local;
    if (t < s.start) return target;
    const double held = std::floor((t - s.start) / s.step) * s.step;
    for (std::size_t c = 0; c < s.cables.size(); ++c) {
      const int a = s.cables[c];
      if (a < 0 || a >= base.size()) throw ConfigError("local script cable index out of range");
      const double phase = 2.0 * M_PI * held / s.period + static_cast<double>(c) * s.phase;
      target(a) = base(a) * (1.0 - 0.5 * s.amplitude * (1.0 - std::cos(phase)));
    }
    return target;
  }
  for (const auto& r : config.global.rolls) {
    if (t < r.time || t >= r.time + r.hold) continue;
    for (int a : r.cables) {
      if (a < 0 || a >= base.size()) throw ConfigError("roll cable index out of range");
      target(a) = base(a) * r.ratio;
    }
  }
  return target;
}

NodeMatrix settled_shape(const Dynamics& dynamics, const NodeMatrix& nominal, const std::array<int, 3>& face,
                         double duration, double dt) {
  NodeState s{rest_on_face(nominal, face, dynamics.environment().ground.height),
              NodeMatrix::Zero(nominal.rows(), 3)};
  const Eigen::VectorXd base = [&] {
    const auto& act = dynamics.model().actuated_indices();
    Eigen::VectorXd b(act.size());
    for (std::size_t k = 0; k < act.size(); ++k) b(k) = dynamics.model().member(act[k]).rest_length;
    return b;
  }();
  const int steps = static_cast<int>(std::lround(duration / dt));
  if (steps > 0) s = dynamics.propagate(s, base, dt, steps);
  return s.positions;
}

NodeMatrix TruthRun::position_at(double t) const {
  const long k = std::clamp<long>(std::lround(t / dt), 0, static_cast<long>(positions.size()) - 1);
  return positions[k];
}

Eigen::VectorXd TruthRun::command_at(double t) const {
  const long k = std::clamp<long>(std::lround(t / dt), 0, static_cast<long>(commands.size()) - 1);
  return commands[k];
}

TruthRun simulate_truth(const ScenarioConfig& config, const Dynamics& dynamics, const NodeMatrix& nominal,
                        const std::array<int, 3>& base_face) {
  const TensegrityModel& model = dynamics.model();
  Eigen::VectorXd base(model.actuated_indices().size());
  for (int k = 0; k < base.size(); ++k) base(k) = model.member(model.actuated_indices()[k]).rest_length;

  NodeState s{settled_shape(dynamics, nominal, base_face, config.presettle, config.sim_dt),
              NodeMatrix::Zero(nominal.rows(), 3)};
  const Eigen::RowVector3d shift(config.robot_start[0] - s.positions.col(0).mean(),
                                 config.robot_start[1] - s.positions.col(1).mean(), 0.0);
  s.positions.rowwise() += shift;

  TruthRun run;
  run.dt = config.sim_dt;
  const long steps = std::lround(config.duration / config.sim_dt);
  run.positions.reserve(steps + 1);
  run.commands.reserve(steps + 1);
  SpoolActuator spool(base, config.max_spool_rate);
  run.positions.push_back(s.positions);
  for (long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * config.sim_dt;
    const Eigen::VectorXd cmd = spool.advance(script_targets(config, base, t), config.sim_dt);
    run.commands.push_back(cmd);
    s = dynamics.step(s, cmd, config.sim_dt);
    run.positions.push_back(s.positions);
  }
  run.commands.push_back(spool.current());
  return run;
}

RadioNetwork make_network(const ScenarioConfig& config, int node_count, ranging::Rng& rng) {
  RadioNetwork net;
  const auto positions = anchor_positions(config.anchors);
  for (int i = 0; i < node_count; ++i) net.endcap_ids.push_back(i);
  net.anchor_ids = anchor_ids(node_count, static_cast<int>(positions.size()));
  for (std::size_t k = 0; k < positions.size(); ++k) net.anchors[net.anchor_ids[k]] = positions[k];

  const RangingConfig& r = config.ranging;
  std::uniform_real_distribution<double> offset(0.0, r.clock_offset_max);
  std::uniform_real_distribution<double> skew(-r.skew_ppm * 1e-6, r.skew_ppm * 1e-6);
  std::uniform_real_distribution<double> bias(r.offset_min, r.offset_max);
  std::vector<int> all = net.endcap_ids;
  all.insert(all.end(), net.anchor_ids.begin(), net.anchor_ids.end());
  for (int id : all) net.clocks[id] = {offset(rng), skew(rng), r.quantum};
  for (std::size_t a = 0; a < all.size(); ++a)
    for (std::size_t b = a + 1; b < all.size(); ++b) net.true_offsets.set(all[a], all[b], bias(rng));

  net.broadcast.slot_spacing = r.slot_spacing;
  net.broadcast.timestamp_noise.sigma =
      r.timestamp_sigma >= 0.0 ? r.timestamp_sigma : ranging::timestamp_sigma_for_distance_variance(r.distance_variance);
  net.broadcast.timestamp_noise.loss_probability = r.loss_probability;
  net.broadcast.channel = {r.nlos_probability, r.nlos_bias_mean, r.rejection_probability, r.power_threshold};
  return net;
}

ranging::BroadcastRound range_round(const RadioNetwork& net, const TensegrityModel& model, const NodeMatrix& nodes,
                                    double mount_offset, double start, ranging::Rng& rng) {
  std::vector<ranging::BroadcastModule> modules;
  for (int id : net.endcap_ids) {
    modules.push_back({id, net.clocks.at(id), ranging::sensor_position(model, nodes, id, mount_offset), true});
  }
  for (int id : net.anchor_ids) modules.push_back({id, net.clocks.at(id), net.anchors.at(id), true});
  return ranging::broadcast_round(modules, start, net.broadcast, net.true_offsets, ranging::OffsetTable{}, rng);
}

namespace {

Eigen::Matrix3d random_rotation(ranging::Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

std::vector<std::pair<int, int>> bar_pairs(const TensegrityModel& model) {
  std::vector<std::pair<int, int>> out;
  for (int b : model.bar_indices()) out.emplace_back(model.plus_node(b), model.minus_node(b));
  return out;
}

}  // namespace

std::vector<ranging::RangingMeasurement> calibration_log(const ScenarioConfig& config, const RadioNetwork& net,
                                                         const TensegrityModel& model, const NodeMatrix& shape,
                                                         ranging::Rng& rng, std::vector<NodeMatrix>* poses) {
  const auto& c = config.calibration;
  const double hx = config.anchors.width / 2.0 - c.pose_margin;
  const double hy = config.anchors.depth / 2.0 - c.pose_margin;
  if (hx <= 0.0 || hy <= 0.0) throw ConfigError("calibration pose margin leaves no room");
  std::uniform_real_distribution<double> ux(-hx, hx);
  std::uniform_real_distribution<double> uy(-hy, hy);
  std::uniform_real_distribution<double> uz(c.pose_height_min, c.pose_height_max);
  const Eigen::RowVector3d centre = shape.colwise().mean();

  std::vector<ranging::RangingMeasurement> log;
  for (int s = 0; s < c.samples; ++s) {
    const Eigen::Matrix3d rot = random_rotation(rng);
    const Eigen::RowVector3d at(ux(rng), uy(rng), uz(rng));
    NodeMatrix pose = ((shape.rowwise() - centre) * rot.transpose()).rowwise() + at;
    if (poses) poses->push_back(pose);
    for (int k = 0; k < c.rounds_per_sample; ++k) {
      const double start = s + static_cast<double>(k) / config.ranging.round_rate;
      auto round = range_round(net, model, pose, config.ranging.mount_offset, start, rng);
      log.insert(log.end(), round.measurements.begin(), round.measurements.end());
    }
  }
  return log;
}

calibration::CalibrationDataset session_dataset(const ScenarioConfig& config, const RadioNetwork& net,
                                                const TensegrityModel& model, const NodeMatrix& shape,
                                                const std::vector<ranging::RangingMeasurement>& log) {
  calibration::DatasetOptions opts;
  opts.sample_period = 1.0;
  opts.max_samples = 0;
  opts.seed = config.seed;
  opts.bars = bar_pairs(model);
  double length = 0.0;
  for (const auto& [a, b] : opts.bars) length += (shape.row(a) - shape.row(b)).norm();
  opts.bar_length = length / static_cast<double>(opts.bars.size()) - 2.0 * config.ranging.mount_offset;
  return calibration::dataset_from_log(log, net.anchor_ids, net.endcap_ids, opts);
}

calibration::Priors session_priors(const ScenarioConfig& config, const RadioNetwork& net,
                                   const calibration::CalibrationDataset&) {
  calibration::Priors p;
  for (int k : config.anchors.priors) p.anchors[k] = net.anchors.at(net.anchor_ids.at(k));
  p.reference_anchor = config.anchors.reference_anchor;
  p.reference_side = config.anchors.reference_side;
  return p;
}

CalibrationSession run_calibration_session(const ScenarioConfig& config, const RadioNetwork& net,
                                           const TensegrityModel& model, const NodeMatrix& shape,
                                           ranging::Rng& rng) {
  CalibrationSession s;
  s.log = calibration_log(config, net, model, shape, rng, &s.poses);
  s.dataset = session_dataset(config, net, model, shape, s.log);
  s.priors = session_priors(config, net, s.dataset);
  calibration::CalibrationOptions opts;
  opts.seed = config.seed;
  const auto result = calibration::calibrate(s.dataset, s.priors, opts);
  const auto internal = calibration::internal_offsets(result, s.dataset, config.calibration.min_internal_samples);
  s.file = calibration::to_file(result, s.dataset, internal);
  return s;
}

ScenarioData prepare_scenario(const ScenarioConfig& config) {
  validate(config);
  ScenarioData d;
  d.config = config;
  d.loaded = load_model(config.model);
  const TensegrityModel& model = d.loaded.model;
  Environment env;
  env.ground = config.ground;
  const Dynamics dynamics(model, env);
  d.rest_shape = settled_shape(dynamics, d.loaded.nominal, d.loaded.base_face, config.presettle, config.sim_dt);
  d.truth = simulate_truth(config, dynamics, d.loaded.nominal, d.loaded.base_face);

  const double truth_dt = 1.0 / config.truth_rate;
  const long truth_steps = std::lround(std::floor(config.duration / truth_dt + 1e-9));
  for (long k = 0; k <= truth_steps; ++k) {
    const double t = static_cast<double>(k) * truth_dt;
    d.truth_trajectory.time.push_back(t);
    d.truth_trajectory.nodes.push_back(d.truth.position_at(t));
  }

  auto net_rng = make_rng(config.seed, kNetwork);
  d.network = make_network(config, model.node_count(), net_rng);

  // Ranging: module positions frozen at the middle of each round.
  auto range_rng = make_rng(config.seed, kRanging);
  const double round_period = 1.0 / config.ranging.round_rate;
  const double round_length = 3.0 * config.ranging.slot_spacing *
                              static_cast<double>(d.network.endcap_ids.size() + d.network.anchor_ids.size());
  for (long r = 0;; ++r) {
    const double start = static_cast<double>(r) * round_period;
    if (start + round_length > config.duration) break;
    const NodeMatrix nodes = d.truth.position_at(start + 0.5 * round_length);
    auto round = range_round(d.network, model, nodes, config.ranging.mount_offset, start, range_rng);
    d.measurements.insert(d.measurements.end(), round.measurements.begin(), round.measurements.end());
  }
  std::stable_sort(d.measurements.begin(), d.measurements.end(),
                   [](const auto& a, const auto& b) { return a.time < b.time; });

  // Bundles and IMU samples.
  auto imu_rng = make_rng(config.seed, kImu);
  std::normal_distribution<double> angle_noise(0.0, std::sqrt(config.imu.angle_variance));
  const int bars = static_cast<int>(model.bar_indices().size());
  const long bundles = std::lround(std::floor(config.duration * config.filter.bundle_rate + 1e-9));
  for (long k = 1; k <= bundles; ++k) {
    const double t = static_cast<double>(k) / config.filter.bundle_rate;
    d.bundle_times.push_back(t);
    const NodeMatrix nodes = d.truth.position_at(t);
    std::vector<estimation::BarAngles> angles;
    for (int b = 0; b < bars; ++b) {
      estimation::BarAngles a = estimation::bar_angles(model, nodes, b);
      a.pitch += angle_noise(imu_rng);
      a.heading = ukf::wrap_angle(a.heading + angle_noise(imu_rng));
      angles.push_back(a);
    }
    d.imu.push_back(std::move(angles));
  }
  for (const auto& s : config.imu.spurious) {
    const auto it = std::lower_bound(d.bundle_times.begin(), d.bundle_times.end(), s.time - 1e-9);
    if (it == d.bundle_times.end()) {
      d.warnings.push_back("spurious IMU sample after the end of the run ignored");
      continue;
    }
    if (s.bar < 0 || s.bar >= bars) throw ConfigError("spurious IMU bar out of range");
    auto& a = d.imu[it - d.bundle_times.begin()][s.bar];
    a.pitch += s.pitch_error;
    a.heading = ukf::wrap_angle(a.heading + s.heading_error);
    d.spurious_bundle_times.push_back(*it);
  }

  if (config.calibration.offsets == "calibrated") {
    auto cal_rng = make_rng(config.seed, kCalibration);
    d.calibration = run_calibration_session(config, d.network, model, d.rest_shape, cal_rng);
    d.calibration.log.clear();
    d.calibration.log.shrink_to_fit();
    for (const auto& w : d.calibration.file.warnings) d.warnings.push_back("calibration: " + w);
  } else {
    d.calibration.file.anchors = d.network.anchors;
    d.calibration.file.offsets = d.network.true_offsets;
    d.calibration.file.converged = true;
    d.calibration.file.status = "true values";
  }
  return d;
}

ranging::OffsetTable setting_offsets(const ScenarioData& data, Setting setting) {
  const ranging::OffsetTable& t = data.calibration.file.offsets;
  return setting == Setting::FullConstOffset ? t.with_constant(t.mean()) : t;
}

std::vector<ukf::MeasurementBundle> setting_bundles(const ScenarioData& data, Setting setting,
                                                    const ranging::OffsetTable& offsets) {
  const int n = data.loaded.model.node_count();
  const auto mode = data.config.filter.angle_mode == "pitch" ? estimation::AngleMode::Pitch
                                                             : estimation::AngleMode::PitchHeading;
  std::vector<int> allowed_anchor(data.network.anchor_ids.size(), 1);
  if (setting == Setting::Anchors4) {
    for (std::size_t k = 0; k < allowed_anchor.size(); ++k) allowed_anchor[k] = k % 2 == 0;
  }
  auto usable = [&](int id) {
    if (id < n) return true;
    const std::size_t k = static_cast<std::size_t>(id - n);
    return k < allowed_anchor.size() && allowed_anchor[k] != 0;
  };

  std::vector<ukf::MeasurementBundle> out;
  std::size_t next = 0;
  const auto& ms = data.measurements;
  for (std::size_t b = 0; b < data.bundle_times.size(); ++b) {
    ukf::MeasurementBundle bundle;
    bundle.time = data.bundle_times[b];
    if (uses_imu(setting)) {
      for (int bar = 0; bar < static_cast<int>(data.imu[b].size()); ++bar) {
        for (const auto& a : estimation::angle_observations(bar, data.imu[b][bar], mode)) bundle.angles.push_back(a);
      }
    }
    while (next < ms.size() && ms[next].time <= bundle.time) {
      const auto& m = ms[next++];
      if (!m.accepted) continue;
      if (m.i >= n && m.j >= n) continue;
      if (!usable(m.i) || !usable(m.j)) continue;
      bundle.ranges.push_back({m.i, m.j, m.raw - offsets.get(m.i, m.j)});
    }
    out.push_back(std::move(bundle));
  }
  return out;
}

ScenarioResult run_setting(const ScenarioData& data, Setting setting) {
  const ScenarioConfig& c = data.config;
  const TensegrityModel& model = data.loaded.model;
  const int n = model.node_count();
  ScenarioResult r;
  r.config = c;
  r.config.setting = setting;
  r.setting = setting;
  r.warnings = data.warnings;
  r.anchors_used = data.calibration.file.anchors;
  r.offsets_used = setting_offsets(data, setting);

  const auto bundles = setting_bundles(data, setting, r.offsets_used);
  const double dt = 1.0 / c.filter.rate;
  r.filter_start = std::ceil(c.filter.init_window / dt - 1e-9) * dt;

  ukf::MeasurementBundle init;
  init.time = r.filter_start;
  for (const auto& b : bundles) {
    if (b.time > r.filter_start + 1e-9) break;
    init.ranges.insert(init.ranges.end(), b.ranges.begin(), b.ranges.end());
  }
  const ukf::Belief initial = estimation::initial_belief(model, data.rest_shape, r.anchors_used, init,
                                                         c.ranging.mount_offset, c.filter.initial_variance);

  std::vector<ukf::ControlSample> controls;
  for (double t = r.filter_start; t < c.duration + 1e-9; t += dt) controls.push_back({t, data.truth.command_at(t)});

  ukf::UkfParams params;
  params.alpha = c.filter.alpha;
  params.beta = c.filter.beta;
  params.kappa = c.filter.kappa;
  params.state_noise = c.filter.state_noise;
  params.velocity_noise = c.filter.velocity_noise;
  params.angle_noise = c.filter.angle_noise;
  params.range_noise = c.filter.range_noise;

  Environment env;
  env.ground = c.ground;
  const Dynamics dynamics(model, env);
  const estimation::DynamicsProcess process(dynamics, c.sim_dt);
  const estimation::TensegrityMeasurement measurement(model, r.anchors_used, c.ranging.mount_offset);

  const auto t0 = std::chrono::steady_clock::now();
  ukf::FilterRun run =
      ukf::run_filter(bundles, controls, initial, {r.filter_start, c.duration, dt}, process, measurement, params);
  r.filter_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.warnings.insert(r.warnings.end(), run.warnings.begin(), run.warnings.end());

  for (const auto& s : run.steps) {
    r.estimate.time.push_back(s.time);
    r.estimate.nodes.push_back(estimation::positions_of(s.mean));
    Eigen::VectorXd var(n);
    for (int i = 0; i < n; ++i) var(i) = s.cov_diagonal.segment<3>(3 * i).sum();
    r.estimate.node_variance.push_back(var);
    r.estimate.cov_trace.push_back(s.cov_trace);
  }
  r.steps = std::move(run.steps);

  MetricsContext ctx;
  ctx.filter_start = r.filter_start;
  long total = 0;
  long accepted = 0;
  for (const auto& m : data.measurements) {
    ++total;
    accepted += m.accepted ? 1 : 0;
  }
  ctx.acceptance_rate = total > 0 ? static_cast<double>(accepted) / static_cast<double>(total) : 0.0;
  if (c.scenario == ScenarioKind::Local) {
    ctx.actuated_endcap = c.local.actuated_endcap;
    ctx.unactuated_endcap = c.local.unactuated_endcap;
  } else {
    const auto& rolls = c.global.rolls;
    for (std::size_t k = 0; k < rolls.size(); ++k) {
      const double start = rolls[k].time + rolls[k].hold + c.metrics.post_roll_delay;
      const double end = k + 1 < rolls.size() ? rolls[k + 1].time : c.duration;
      if (end > start) ctx.post_roll.push_back({start, end});
    }
  }
  if (uses_imu(setting)) ctx.spurious_times = data.spurious_bundle_times;
  r.metrics = compute_metrics(data.truth_trajectory, r.estimate, c.metrics, ctx);
  return r;
}

ScenarioResult run_scenario(const ScenarioConfig& config) {
  return run_setting(prepare_scenario(config), config.setting);
}

}  // namespace tensegrity::harness
