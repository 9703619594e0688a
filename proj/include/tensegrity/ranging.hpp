#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tensegrity/structure.hpp"

namespace tensegrity::ranging {

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s, vacuum
/// DW1000 timestamp resolution (1 / (128 * 499.2 MHz)).
inline constexpr double kDw1000Tick = 15.65e-12;

using Rng = std::mt19937_64;

class RangingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The exchange was lost (a packet was dropped); no measurement is produced.
class MissingExchangeError : public RangingError {
 public:
  using RangingError::RangingError;
};

/// Local clock: quantize(offset + (1 + skew) t).
struct ClockModel {
  double offset = 0.0;   // s
  double skew = 0.0;     // dimensionless, 20e-6 == 20 ppm
  double quantum = 0.0;  // s, 0 disables quantization
};

void validate(const ClockModel& clock);
double local_timestamp(const ClockModel& clock, double true_time);

/// The six timestamps of one double-sided exchange. Module `initiator` (i)
/// sends poll and final; module `responder` (j) sends the response and
/// computes the distance. Each timestamp is in the clock of the module that
/// recorded it.
struct TimestampSet {
  int initiator = 0;
  int responder = 1;
  double t_sp = 0.0;  // poll sent, initiator clock
  double t_rp = 0.0;  // poll received, responder clock
  double t_sr = 0.0;  // response sent, responder clock
  double t_rr = 0.0;  // response received, initiator clock
  double t_sf = 0.0;  // final sent, initiator clock
  double t_rf = 0.0;  // final received, responder clock
};

/// Reply delays, each measured in the local clock of the module that waits.
struct ExchangeDelays {
  double response = 1.0e-3;  // responder: poll received -> response sent
  double final = 1.0e-3;     // initiator: response received -> final sent
};

struct TimestampNoise {
  double sigma = 0.0;             // s, Gaussian noise added to every timestamp
  double loss_probability = 0.0;  // per exchange
};

/// Simulates one poll/response/final exchange over `distance` metres.
/// `tof_bias` (s) is added to every flight and models the pairwise antenna
/// delay. Throws MissingExchangeError when packet loss is drawn.
TimestampSet twr_exchange(double distance, const ClockModel& initiator_clock, const ClockModel& responder_clock,
                          const ExchangeDelays& delays, double tof_bias = 0.0, double start_time = 0.0,
                          const TimestampNoise& noise = {}, Rng* rng = nullptr, int initiator = 0,
                          int responder = 1);

/// Double-sided estimate 1/2 (c - d b / a), uncorrected.
double tof_estimate(const TimestampSet& ts);
/// Single-sided estimate 1/2 (c - d), for comparison only.
double single_sided_tof_estimate(const TimestampSet& ts);

/// Symmetric per-pair distance offsets o_{i,j}.
class OffsetTable {
 public:
  void set(int i, int j, double offset);
  /// Offset for the pair, or 0 when the pair has no entry.
  double get(int i, int j) const;
  std::optional<double> find(int i, int j) const;
  bool contains(int i, int j) const { return find(i, j).has_value(); }
  std::size_t size() const { return table_.size(); }
  /// Entries keyed by (min id, max id).
  const std::map<std::pair<int, int>, double>& entries() const { return table_; }
  /// Mean of all offsets (0 for an empty table).
  double mean() const;
  /// Same pairs, every offset replaced by `value`.
  OffsetTable with_constant(double value) const;

 private:
  static std::pair<int, int> key(int i, int j);
  std::map<std::pair<int, int>, double> table_;
};

struct RangingMeasurement {
  int i = 0;               // initiator
  int j = 1;               // responder, which computed the distance
  double raw = 0.0;        // m_{j,i}
  double corrected = 0.0;  // m_{j,i} - o_{j,i}
  double time = 0.0;       // s, wall time the measurement became available
  bool accepted = true;
  int direction = 1;  // id of the computing module
  double power_score = 1.0;
  bool nlos = false;
};

/// raw = c * tof_estimate(ts), corrected = raw - o_{j,i}.
RangingMeasurement distance_estimate(const TimestampSet& ts, const OffsetTable& offsets, double time = 0.0);

/// Non-line-of-sight and signal-power model used to gate packets.
///
/// A packet is NLOS with probability `nlos_probability`; NLOS packets carry an
/// Exponential(`nlos_bias_mean`) positive range bias and a degraded power
/// score. Line-of-sight packets are additionally given a low score often
/// enough that the total rejection rate is max(rejection_probability,
/// nlos_probability).
struct NoiseModel {
  double nlos_probability = 0.0;
  double nlos_bias_mean = 0.5;  // m
  double rejection_probability = 0.0;
  double power_threshold = 0.5;
};

void validate(const NoiseModel& model);

/// Draws the NLOS state, bias and power score of a fresh measurement.
void apply_channel(RangingMeasurement& m, const NoiseModel& model, Rng& rng);

enum class GateDecision { Accepted, Rejected };

GateDecision nlos_gate(const RangingMeasurement& m, const NoiseModel& model);

/// Range variance produced by independent timestamp noise of std `sigma`
/// for an exchange whose reply-to-round ratio d/a equals `reply_ratio`.
double distance_variance_for_timestamp_sigma(double sigma, double reply_ratio = 0.5);
double timestamp_sigma_for_distance_variance(double variance, double reply_ratio = 0.5);

// --- Broadcast ranging -------------------------------------------------------

struct BroadcastModule {
  int id = 0;
  ClockModel clock;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  /// Whether the module forwards the distances it computes. Robot modules do;
  /// fixed anchors range but cannot report.
  bool reports = true;
};

struct BroadcastConfig {
  double slot_spacing = 1.0e-3;
  TimestampNoise timestamp_noise;
  NoiseModel channel;
};

enum class PacketKind { Poll, Response, Final };

struct Packet {
  int sender = 0;
  PacketKind kind = PacketKind::Poll;
  double emit_time = 0.0;  // true time
};

struct BroadcastRound {
  std::vector<Packet> packets;
  std::vector<RangingMeasurement> measurements;
  double start_time = 0.0;
  double end_time = 0.0;  // last reception, true time

  double duration() const { return end_time - start_time; }
};

/// Per-pair true distance bias (m) folded into every flight between the pair.
using PairBias = OffsetTable;

/// One broadcast round: module k sends poll, response and final in slots
/// k, n + k and 2n + k after the lowest-id module's poll. Every reporting
/// module computes a distance to every other module from the other's poll and
/// final and its own response. IDs must be unique.
BroadcastRound broadcast_round(const std::vector<BroadcastModule>& modules, double start_time,
                               const BroadcastConfig& config, const PairBias& true_bias,
                               const OffsetTable& correction, Rng& rng);

/// Ranging sensor location: the node displaced `mount_offset` along its bar
/// toward the bar's other node.
Eigen::Vector3d sensor_position(const TensegrityModel& model, const NodeMatrix& nodes, int endcap,
                                double mount_offset);

/// Partner node of `endcap` along its bar. Throws GeometryError if the node is
/// not the end of exactly one bar.
int bar_partner(const TensegrityModel& model, int endcap);

// --- Measurement log (JSON lines) ---------------------------------------------

void write_measurement_log(std::ostream& out, const std::vector<RangingMeasurement>& measurements);
std::vector<RangingMeasurement> read_measurement_log(std::istream& in);

}  // namespace tensegrity::ranging
