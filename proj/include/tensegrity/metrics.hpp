#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tensegrity/scenario_config.hpp"
#include "tensegrity/structure.hpp"

namespace tensegrity::harness {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Trajectory {
  std::vector<double> time;
  std::vector<NodeMatrix> nodes;
};

struct EstimateTrajectory {
  std::vector<double> time;
  std::vector<NodeMatrix> nodes;
  std::vector<Eigen::VectorXd> node_variance;  // trace of each node's 3x3 position block
  std::vector<double> cov_trace;
};

/// Linear interpolation in time, clamped at the ends.
NodeMatrix interpolate(const Trajectory& traj, double t);

using Face = std::array<int, 3>;

/// The three lowest nodes, ascending by index.
Face lowest_face(const NodeMatrix& nodes);

struct FaceTransition {
  double time = 0.0;
  Face from{};
  Face to{};
};

/// Ground-face history: the face changes only after another triangle has been
/// lower (by highest vertex) than the current one by `hysteresis` for `dwell`
/// seconds. The transition time is when that condition first held.
struct FaceHistory {
  Face initial{};
  std::vector<FaceTransition> transitions;

  Face face_at(double t) const;
};

FaceHistory detect_faces(const std::vector<double>& time, const std::vector<NodeMatrix>& nodes, double hysteresis,
                         double dwell);

struct TimeWindow {
  double start = 0.0;
  double end = 0.0;
};

struct MetricsContext {
  double filter_start = 0.0;
  std::vector<TimeWindow> post_roll;
  std::vector<double> spurious_times;
  int actuated_endcap = -1;
  int unactuated_endcap = -1;
  double acceptance_rate = 0.0;
};

struct RunMetrics {
  double scored_from = 0.0;  // start of the post-settle window
  std::vector<double> endcap_rms;
  double rms_all = 0.0;
  double actuated_rms = -1.0;
  double unactuated_rms = -1.0;
  double settle_time = -1.0;  // s after filter start; -1 if never settled
  double mean_cov_trace = 0.0;
  double max_cov_trace = 0.0;
  double final_cov_trace = 0.0;
  double acceptance_rate = 0.0;
  double lag = 0.0;  // s, positive when the estimate trails the truth
  Face initial_true_face{};
  Face initial_est_face{};
  bool initial_face_correct = false;
  std::vector<FaceTransition> true_transitions;
  std::vector<FaceTransition> est_transitions;
  std::vector<bool> transition_matched;
  bool all_transitions_detected = true;
  std::vector<double> post_roll_centroid_error;
  double max_post_roll_centroid_error = 0.0;
  double post_roll_com_error = -1.0;
  std::vector<double> recovery_time;  // per spurious sample, -1 if not recovered
  std::vector<double> spurious_peak_error;
};

/// Truth at 'truth' resolution, estimates at filter steps.
RunMetrics compute_metrics(const Trajectory& truth, const EstimateTrajectory& est, const MetricsConfig& config,
                           const MetricsContext& context);

/// Root mean square of |est - truth| for one node over est steps with t >= from.
double rms_error(const Trajectory& truth, const EstimateTrajectory& est, int node, double from);

/// Lag (s) maximizing the normalized cross-correlation of the node's motion along the
/// truth's principal axis, searched over [-window, window].
double estimate_lag(const Trajectory& truth, const EstimateTrajectory& est, int node, double from, double window,
                    double resolution);

nlohmann::json to_json(const RunMetrics& m);
/// Flat "metric,value" rows.
std::string to_csv(const RunMetrics& m);

}  // namespace tensegrity::harness
