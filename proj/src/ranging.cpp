#include "tensegrity/ranging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <string>

#include <json.hpp>

namespace tensegrity::ranging {

void validate(const ClockModel& clock) {
  if (!(clock.quantum >= 0.0)) throw RangingError("clock quantization must be non-negative");
  if (!(std::abs(clock.skew) < 1e-3)) throw RangingError("clock skew must satisfy |skew| < 1e-3");
  if (!std::isfinite(clock.offset)) throw RangingError("clock offset must be finite");
}

double local_timestamp(const ClockModel& clock, double true_time) {
  const double t = clock.offset + (1.0 + clock.skew) * true_time;
  if (clock.quantum <= 0.0) return t;
  return std::round(t / clock.quantum) * clock.quantum;
}

namespace {

// Inverse of the unquantized clock map.
double true_time_of(const ClockModel& clock, double local) { return (local - clock.offset) / (1.0 + clock.skew); }

double noisy(double t, const ClockModel& clock, const TimestampNoise& noise, Rng* rng) {
  double true_t = t;
  if (rng && noise.sigma > 0.0) true_t += std::normal_distribution<double>(0.0, noise.sigma)(*rng);
  return local_timestamp(clock, true_t);
}

}  // namespace

TimestampSet twr_exchange(double distance, const ClockModel& ci, const ClockModel& cj, const ExchangeDelays& delays,
                          double tof_bias, double start_time, const TimestampNoise& noise, Rng* rng, int initiator,
                          int responder) {
  if (!(distance >= 0.0)) throw RangingError("distance must be non-negative");
  if (!(delays.response > 0.0) || !(delays.final > 0.0)) throw RangingError("protocol delays must be positive");
  validate(ci);
  validate(cj);
  if (rng && noise.loss_probability > 0.0 &&
      std::uniform_real_distribution<double>(0.0, 1.0)(*rng) < noise.loss_probability) {
    throw MissingExchangeError("exchange " + std::to_string(initiator) + "->" + std::to_string(responder) +
                               " lost");
  }
  const double flight = distance / kSpeedOfLight + tof_bias;

  // True event times. Each reply is scheduled in the waiting module's clock.
  const double poll_tx = start_time;
  const double poll_rx = poll_tx + flight;
  const double resp_tx = true_time_of(cj, local_timestamp(cj, poll_rx) + delays.response);
  const double resp_rx = resp_tx + flight;
  const double final_tx = true_time_of(ci, local_timestamp(ci, resp_rx) + delays.final);
  const double final_rx = final_tx + flight;

  TimestampSet ts;
  ts.initiator = initiator;
  ts.responder = responder;
  ts.t_sp = noisy(poll_tx, ci, noise, rng);
  ts.t_rp = noisy(poll_rx, cj, noise, rng);
  ts.t_sr = noisy(resp_tx, cj, noise, rng);
  ts.t_rr = noisy(resp_rx, ci, noise, rng);
  ts.t_sf = noisy(final_tx, ci, noise, rng);
  ts.t_rf = noisy(final_rx, cj, noise, rng);
  return ts;
}

double tof_estimate(const TimestampSet& ts) {
  const double a = ts.t_sf - ts.t_sp;
  const double b = ts.t_rf - ts.t_rp;
  const double c = ts.t_rf - ts.t_sr;
  const double d = ts.t_sf - ts.t_rr;
  if (!(a > 0.0)) throw RangingError("malformed exchange: initiator round time a <= 0");
  return 0.5 * (c - d * b / a);
}

double single_sided_tof_estimate(const TimestampSet& ts) {
  const double c = ts.t_rf - ts.t_sr;
  const double d = ts.t_sf - ts.t_rr;
  return 0.5 * (c - d);
}

std::pair<int, int> OffsetTable::key(int i, int j) {
  if (i == j) throw RangingError("offset table has no diagonal entries");
  return {std::min(i, j), std::max(i, j)};
}

void OffsetTable::set(int i, int j, double offset) { table_[key(i, j)] = offset; }

double OffsetTable::get(int i, int j) const { return find(i, j).value_or(0.0); }

std::optional<double> OffsetTable::find(int i, int j) const {
  const auto it = table_.find(key(i, j));
  if (it == table_.end()) return std::nullopt;
  return it->second;
}

double OffsetTable::mean() const {
  if (table_.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [k, v] : table_) s += v;
  return s / static_cast<double>(table_.size());
}

OffsetTable OffsetTable::with_constant(double value) const {
  OffsetTable out;
  for (const auto& [k, v] : table_) out.table_[k] = value;
  return out;
}

RangingMeasurement distance_estimate(const TimestampSet& ts, const OffsetTable& offsets, double time) {
  RangingMeasurement m;
  m.i = ts.initiator;
  m.j = ts.responder;
  m.direction = ts.responder;
  m.raw = kSpeedOfLight * tof_estimate(ts);
  m.corrected = m.raw - offsets.get(ts.initiator, ts.responder);
  m.time = time;
  return m;
}

void validate(const NoiseModel& model) {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(model.nlos_probability) || !prob(model.rejection_probability)) {
    throw RangingError("channel probabilities must lie in [0, 1]");
  }
  if (!(model.nlos_bias_mean > 0.0)) throw RangingError("NLOS bias mean must be positive");
  if (!(model.power_threshold > 0.4 && model.power_threshold <= 0.6)) {
    throw RangingError("power threshold must lie in (0.4, 0.6]");
  }
}

// Scores are U(0.6, 1) for a clean channel and U(0, 0.4) for a degraded one,
// so any threshold in (0.4, 0.6] separates them.
void apply_channel(RangingMeasurement& m, const NoiseModel& model, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  m.nlos = u(rng) < model.nlos_probability;
  bool degraded = m.nlos;
  if (m.nlos) {
    const double bias = std::exponential_distribution<double>(1.0 / model.nlos_bias_mean)(rng);
    m.raw += bias;
    m.corrected += bias;
  } else if (model.rejection_probability > model.nlos_probability) {
    const double extra = (model.rejection_probability - model.nlos_probability) / (1.0 - model.nlos_probability);
    degraded = u(rng) < extra;
  }
  m.power_score = degraded ? 0.4 * u(rng) : 0.6 + 0.4 * u(rng);
  m.accepted = nlos_gate(m, model) == GateDecision::Accepted;
}

GateDecision nlos_gate(const RangingMeasurement& m, const NoiseModel& model) {
  if (m.power_score < model.power_threshold || !(m.raw > 0.0)) return GateDecision::Rejected;
  return GateDecision::Accepted;
}

// Distance = (c/2)(c' - d b / a). With a ~ b the partial derivatives w.r.t. the
// six timestamps are (-r, r, -1, 1, r - 1, 1 - r) with r = d / a.
double distance_variance_for_timestamp_sigma(double sigma, double reply_ratio) {
  const double r = reply_ratio;
  const double gain = 4.0 - 4.0 * r + 4.0 * r * r;
  return 0.25 * kSpeedOfLight * kSpeedOfLight * sigma * sigma * gain;
}

double timestamp_sigma_for_distance_variance(double variance, double reply_ratio) {
  if (!(variance >= 0.0)) throw RangingError("variance must be non-negative");
  return std::sqrt(variance / distance_variance_for_timestamp_sigma(1.0, reply_ratio));
}

BroadcastRound broadcast_round(const std::vector<BroadcastModule>& modules, double start_time,
                               const BroadcastConfig& config, const PairBias& true_bias,
                               const OffsetTable& correction, Rng& rng) {
  if (!(config.slot_spacing > 0.0)) throw RangingError("slot spacing must be positive");
  const int n = static_cast<int>(modules.size());
  if (n < 2) throw RangingError("broadcast ranging needs at least two modules");
  std::set<int> ids;
  for (const auto& m : modules) {
    if (!ids.insert(m.id).second) throw RangingError("slot collision: duplicate module id " + std::to_string(m.id));
    validate(m.clock);
  }
  validate(config.channel);

  // Slot order follows ascending id.
  std::vector<int> order(n);
  for (int k = 0; k < n; ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](int a, int b) { return modules[a].id < modules[b].id; });
  std::vector<int> slot(n);
  for (int s = 0; s < n; ++s) slot[order[s]] = s;

  auto flight = [&](int a, int b) {
    const double d = (modules[a].position - modules[b].position).norm();
    return (d + true_bias.get(modules[a].id, modules[b].id)) / kSpeedOfLight;
  };

  // The first poll synchronizes the round: every module schedules its own
  // packets in local time from the moment it heard (or sent) that poll.
  const int leader = order[0];
  const double delta = config.slot_spacing;
  std::vector<std::array<double, 3>> emit(n);  // true emission time of poll, response, final
  for (int k = 0; k < n; ++k) {
    const ClockModel& clk = modules[k].clock;
    const double ref_true = (k == leader) ? start_time : start_time + flight(leader, k);
    const double ref_local = local_timestamp(clk, ref_true);
    for (int p = 0; p < 3; ++p) {
      const double local = ref_local + (p * n + slot[k]) * delta;
      emit[k][p] = (k == leader && p == 0) ? start_time : true_time_of(clk, local);
    }
  }

  BroadcastRound round;
  round.start_time = start_time;
  round.end_time = start_time;
  for (int p = 0; p < 3; ++p) {
    for (int s = 0; s < n; ++s) {
      const int k = order[s];
      round.packets.push_back({modules[k].id, static_cast<PacketKind>(p), emit[k][p]});
      for (int r = 0; r < n; ++r) {
        if (r != k) round.end_time = std::max(round.end_time, emit[k][p] + flight(k, r));
      }
    }
  }

  // Emission timestamps carry one noise draw per packet; each reception its own.
  const TimestampNoise& tn = config.timestamp_noise;
  std::vector<std::array<double, 3>> emit_stamp(n);
  for (int k = 0; k < n; ++k)
    for (int p = 0; p < 3; ++p) emit_stamp[k][p] = noisy(emit[k][p], modules[k].clock, tn, &rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::array<char, 3>> lost(n);
  for (int k = 0; k < n; ++k)
    for (int p = 0; p < 3; ++p) lost[k][p] = tn.loss_probability > 0.0 && u(rng) < tn.loss_probability;

  for (int sj = 0; sj < n; ++sj) {
    const int j = order[sj];
    if (!modules[j].reports) continue;
    for (int si = 0; si < n; ++si) {
      const int i = order[si];
      if (i == j) continue;
      if (lost[i][0] || lost[j][1] || lost[i][2]) continue;
      const double tof = flight(i, j);
      TimestampSet ts;
      ts.initiator = modules[i].id;
      ts.responder = modules[j].id;
      ts.t_sp = emit_stamp[i][0];
      ts.t_rp = noisy(emit[i][0] + tof, modules[j].clock, tn, &rng);
      ts.t_sr = emit_stamp[j][1];
      ts.t_rr = noisy(emit[j][1] + tof, modules[i].clock, tn, &rng);
      ts.t_sf = emit_stamp[i][2];
      ts.t_rf = noisy(emit[i][2] + tof, modules[j].clock, tn, &rng);
      RangingMeasurement m = distance_estimate(ts, correction, emit[i][2] + tof);
      apply_channel(m, config.channel, rng);
      round.measurements.push_back(m);
    }
  }
  return round;
}

int bar_partner(const TensegrityModel& model, int endcap) {
  if (endcap < 0 || endcap >= model.node_count()) {
    throw GeometryError("node " + std::to_string(endcap) + " does not exist");
  }
  int partner = -1;
  int count = 0;
  for (int k : model.bar_indices()) {
    if (model.plus_node(k) == endcap) {
      partner = model.minus_node(k);
      ++count;
    } else if (model.minus_node(k) == endcap) {
      partner = model.plus_node(k);
      ++count;
    }
  }
  if (count != 1) throw GeometryError("node " + std::to_string(endcap) + " is not the end of exactly one bar");
  return partner;
}

Eigen::Vector3d sensor_position(const TensegrityModel& model, const NodeMatrix& nodes, int endcap,
                                double mount_offset) {
  const int other = bar_partner(model, endcap);
  const Eigen::Vector3d p = nodes.row(endcap).transpose();
  const Eigen::Vector3d axis = nodes.row(other).transpose() - p;
  const double len = axis.norm();
  if (!(len > 1e-9)) throw GeometryError("bar at node " + std::to_string(endcap) + " is degenerate");
  return p + (mount_offset / len) * axis;
}

void write_measurement_log(std::ostream& out, const std::vector<RangingMeasurement>& measurements) {
  for (const auto& m : measurements) {
    nlohmann::json j = {{"t", m.time},        {"i", m.i},
                        {"j", m.j},           {"raw", m.raw},
                        {"corrected", m.corrected}, {"accepted", m.accepted},
                        {"direction", m.direction}, {"power", m.power_score}};
    out << j.dump() << '\n';
  }
  if (!out) throw RangingError("failed to write measurement log");
}

std::vector<RangingMeasurement> read_measurement_log(std::istream& in) {
  std::vector<RangingMeasurement> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RangingMeasurement m;
      m.time = j.at("t").get<double>();
      m.i = j.at("i").get<int>();
      m.j = j.at("j").get<int>();
      m.raw = j.at("raw").get<double>();
      m.corrected = j.value("corrected", m.raw);
      m.accepted = j.value("accepted", true);
      m.direction = j.value("direction", m.j);
      m.power_score = j.value("power", 1.0);
      out.push_back(m);
    } catch (const nlohmann::json::exception& e) {
      throw RangingError("measurement log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace tensegrity::ranging
