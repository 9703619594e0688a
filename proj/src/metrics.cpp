#include "tensegrity/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace tensegrity::harness {

NodeMatrix interpolate(const Trajectory& traj, double t) {
  if (traj.time.empty()) throw MetricsError("empty trajectory");
  if (t <= traj.time.front()) return traj.nodes.front();
  if (t >= traj.time.back()) return traj.nodes.back();
  const auto it = std::upper_bound(traj.time.begin(), traj.time.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - traj.time.begin());
  const double t0 = traj.time[k - 1];
  const double t1 = traj.time[k];
  const double w = (t - t0) / (t1 - t0);
  return (1.0 - w) * traj.nodes[k - 1] + w * traj.nodes[k];
}

Face lowest_face(const NodeMatrix& nodes) {
  std::vector<int> idx(nodes.rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + 3, idx.end(), [&](int a, int b) {
    return nodes(a, 2) < nodes(b, 2) || (nodes(a, 2) == nodes(b, 2) && a < b);
  });
  Face f{idx[0], idx[1], idx[2]};
  std::sort(f.begin(), f.end());
  return f;
}

namespace {

double top_z(const NodeMatrix& nodes, const Face& f) {
  return std::max({nodes(f[0], 2), nodes(f[1], 2), nodes(f[2], 2)});
}

Eigen::Vector3d centroid(const NodeMatrix& nodes, const Face& f) {
  return (nodes.row(f[0]) + nodes.row(f[1]) + nodes.row(f[2])).transpose() / 3.0;
}

}  // namespace

Face FaceHistory::face_at(double t) const {
  Face f = initial;
  for (const auto& tr : transitions) {
    if (tr.time <= t) f = tr.to;
  }
  return f;
}

FaceHistory detect_faces(const std::vector<double>& time, const std::vector<NodeMatrix>& nodes, double hysteresis,
                         double dwell) {
  FaceHistory h;
  if (time.empty()) return h;
  Face current = lowest_face(nodes.front());
  h.initial = current;
  bool pending = false;
  Face candidate{};
  double since = 0.0;
  for (std::size_t k = 0; k < time.size(); ++k) {
    const Face c = lowest_face(nodes[k]);
    if (c == current || top_z(nodes[k], current) - top_z(nodes[k], c) <= hysteresis) {
      pending = false;
      continue;
    }
    if (!pending || c != candidate) {
      pending = true;
      candidate = c;
      since = time[k];
    }
    if (time[k] - since >= dwell) {
      h.transitions.push_back({since, current, candidate});
      current = candidate;
      pending = false;
    }
  }
  return h;
}

double rms_error(const Trajectory& truth, const EstimateTrajectory& est, int node, double from) {
  double sum = 0.0;
  int count = 0;
  for (std::size_t k = 0; k < est.time.size(); ++k) {
    if (est.time[k] < from) continue;
    const NodeMatrix t = interpolate(truth, est.time[k]);
    sum += (est.nodes[k].row(node) - t.row(node)).squaredNorm();
    ++count;
  }
  if (count == 0) throw MetricsError("empty overlap window for RMS");
  return std::sqrt(sum / count);
}

double estimate_lag(const Trajectory& truth, const EstimateTrajectory& est, int node, double from, double window,
                    double resolution) {
  std::vector<std::size_t> steps;
  for (std::size_t k = 0; k < est.time.size(); ++k)
    if (est.time[k] >= from + window && est.time[k] <= est.time.back() - window) steps.push_back(k);
  if (steps.size() < 3) throw MetricsError("window too short for lag estimation");

  // Principal axis of the true motion.
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  std::vector<Eigen::Vector3d> tp;
  for (std::size_t k : steps) {
    tp.push_back(interpolate(truth, est.time[k]).row(node).transpose());
    mean += tp.back();
  }
  mean /= static_cast<double>(tp.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : tp) cov += (p - mean) * (p - mean).transpose();
  const Eigen::Vector3d axis = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(cov).eigenvectors().col(2);

  std::vector<double> e;
  double emean = 0.0;
  for (std::size_t k : steps) {
    e.push_back(est.nodes[k].row(node).dot(axis.transpose()));
    emean += e.back();
  }
  emean /= static_cast<double>(e.size());
  for (double& v : e) v -= emean;

  double best_lag = 0.0;
  double best = -std::numeric_limits<double>::infinity();
  const int n = static_cast<int>(std::lround(window / resolution));
  for (int s = -n; s <= n; ++s) {
    const double tau = s * resolution;
    std::vector<double> g;
    double gmean = 0.0;
    for (std::size_t k : steps) {
      g.push_back(interpolate(truth, est.time[k] - tau).row(node).dot(axis.transpose()));
      gmean += g.back();
    }
    gmean /= static_cast<double>(g.size());
    double c = 0.0;
    double gg = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      c += e[i] * (g[i] - gmean);
      gg += (g[i] - gmean) * (g[i] - gmean);
    }
    if (gg > 0.0) c /= std::sqrt(gg);
    if (c > best) {
      best = c;
      best_lag = tau;
    }
  }
  return best_lag;
}

RunMetrics compute_metrics(const Trajectory& truth, const EstimateTrajectory& est, const MetricsConfig& config,
                           const MetricsContext& ctx) {
  if (truth.time.empty() || est.time.empty()) throw MetricsError("empty trajectory");
  if (est.time.back() < truth.time.front() || est.time.front() > truth.time.back()) {
    throw MetricsError("truth and estimate do not overlap in time");
  }
  RunMetrics m;
  m.acceptance_rate = ctx.acceptance_rate;
  m.scored_from = ctx.filter_start + config.settle;
  const int n = static_cast<int>(est.nodes.front().rows());

  std::vector<NodeMatrix> truth_at_est;
  truth_at_est.reserve(est.time.size());
  for (double t : est.time) truth_at_est.push_back(interpolate(truth, t));

  m.endcap_rms.resize(n);
  double all = 0.0;
  for (int i = 0; i < n; ++i) {
    m.endcap_rms[i] = rms_error(truth, est, i, m.scored_from);
    all += m.endcap_rms[i] * m.endcap_rms[i];
  }
  m.rms_all = std::sqrt(all / n);
  if (ctx.actuated_endcap >= 0) m.actuated_rms = m.endcap_rms.at(ctx.actuated_endcap);
  if (ctx.unactuated_endcap >= 0) m.unactuated_rms = m.endcap_rms.at(ctx.unactuated_endcap);

  // Settle: from here on the mean end-cap error stays below the threshold.
  for (std::size_t k = est.time.size(); k-- > 0;) {
    const double err = (est.nodes[k] - truth_at_est[k]).rowwise().norm().mean();
    if (err > config.settle_threshold) {
      if (k + 1 < est.time.size()) m.settle_time = est.time[k + 1] - ctx.filter_start;
      break;
    }
    if (k == 0) m.settle_time = 0.0;
  }

  double trace_sum = 0.0;
  int trace_count = 0;
  for (std::size_t k = 0; k < est.time.size(); ++k) {
    m.max_cov_trace = std::max(m.max_cov_trace, est.cov_trace[k]);
    if (est.time[k] < m.scored_from) continue;
    trace_sum += est.cov_trace[k];
    ++trace_count;
  }
  if (trace_count == 0) throw MetricsError("empty post-settle window");
  m.mean_cov_trace = trace_sum / trace_count;
  m.final_cov_trace = est.cov_trace.back();

  if (ctx.actuated_endcap >= 0) {
    m.lag = estimate_lag(truth, est, ctx.actuated_endcap, m.scored_from, config.lag_window, config.lag_resolution);
  }

  // Faces: both histories are evaluated at the filter steps.
  const FaceHistory th = detect_faces(est.time, truth_at_est, config.face_hysteresis, config.face_dwell);
  const FaceHistory eh = detect_faces(est.time, est.nodes, config.face_hysteresis, config.face_dwell);
  m.initial_true_face = th.initial;
  m.initial_est_face = eh.initial;
  m.initial_face_correct = th.initial == eh.initial;
  m.true_transitions = th.transitions;
  m.est_transitions = eh.transitions;
  for (const auto& tt : th.transitions) {
    bool matched = false;
    for (const auto& et : eh.transitions) {
      if (et.to == tt.to && std::abs(et.time - tt.time) <= config.transition_tolerance) matched = true;
    }
    m.transition_matched.push_back(matched);
    m.all_transitions_detected = m.all_transitions_detected && matched;
  }

  double com_sum = 0.0;
  int com_count = 0;
  for (const auto& w : ctx.post_roll) {
    double sum = 0.0;
    int count = 0;
    for (std::size_t k = 0; k < est.time.size(); ++k) {
      if (est.time[k] < w.start || est.time[k] > w.end) continue;
      const Face f = th.face_at(est.time[k]);
      sum += (centroid(est.nodes[k], f) - centroid(truth_at_est[k], f)).norm();
      ++count;
      com_sum += (est.nodes[k].colwise().mean() - truth_at_est[k].colwise().mean()).norm();
      ++com_count;
    }
    if (count == 0) continue;
    m.post_roll_centroid_error.push_back(sum / count);
    m.max_post_roll_centroid_error = std::max(m.max_post_roll_centroid_error, sum / count);
  }
  if (com_count > 0) m.post_roll_com_error = com_sum / com_count;

  for (double ts : ctx.spurious_times) {
    const double end = ts + config.recovery_window;
    double peak = 0.0;
    double recovered_at = -1.0;
    for (std::size_t k = 0; k < est.time.size(); ++k) {
      if (est.time[k] < ts - 1e-9 || est.time[k] > end + 1e-9) continue;
      bool inside = true;
      for (int i = 0; i < n; ++i) {
        const double err = (est.nodes[k].row(i) - truth_at_est[k].row(i)).norm();
        peak = std::max(peak, err);
        if (err > 2.0 * std::sqrt(est.node_variance[k](i))) inside = false;
      }
      if (!inside) {
        recovered_at = -1.0;
      } else if (recovered_at < 0.0) {
        recovered_at = est.time[k];
      }
    }
    m.recovery_time.push_back(recovered_at < 0.0 ? -1.0 : recovered_at - ts);
    m.spurious_peak_error.push_back(peak);
  }
  return m;
}

namespace {

nlohmann::json face_json(const Face& f) { return nlohmann::json::array({f[0], f[1], f[2]}); }

nlohmann::json transitions_json(const std::vector<FaceTransition>& ts) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& t : ts) out.push_back({{"time", t.time}, {"from", face_json(t.from)}, {"to", face_json(t.to)}});
  return out;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string face_str(const Face& f) {
  return std::to_string(f[0]) + " " + std::to_string(f[1]) + " " + std::to_string(f[2]);
}

}  // namespace

nlohmann::json to_json(const RunMetrics& m) {
  nlohmann::json j;
  j["scored_from"] = m.scored_from;
  j["endcap_rms"] = m.endcap_rms;
  j["rms_all"] = m.rms_all;
  j["actuated_rms"] = m.actuated_rms;
  j["unactuated_rms"] = m.unactuated_rms;
  j["settle_time"] = m.settle_time;
  j["mean_cov_trace"] = m.mean_cov_trace;
  j["max_cov_trace"] = m.max_cov_trace;
  j["final_cov_trace"] = m.final_cov_trace;
  j["acceptance_rate"] = m.acceptance_rate;
  j["lag"] = m.lag;
  j["initial_true_face"] = face_json(m.initial_true_face);
  j["initial_est_face"] = face_json(m.initial_est_face);
  j["initial_face_correct"] = m.initial_face_correct;
  j["true_transitions"] = transitions_json(m.true_transitions);
  j["est_transitions"] = transitions_json(m.est_transitions);
  j["transition_matched"] = m.transition_matched;
  j["all_transitions_detected"] = m.all_transitions_detected;
  j["post_roll_centroid_error"] = m.post_roll_centroid_error;
  j["max_post_roll_centroid_error"] = m.max_post_roll_centroid_error;
  j["post_roll_com_error"] = m.post_roll_com_error;
  j["recovery_time"] = m.recovery_time;
  j["spurious_peak_error"] = m.spurious_peak_error;
  return j;
}

std::string to_csv(const RunMetrics& m) {
  std::ostringstream s;
  s << "metric,value\n";
  s << "scored_from," << num(m.scored_from) << '\n';
  for (std::size_t i = 0; i < m.endcap_rms.size(); ++i) s << "endcap_rms_" << i << ',' << num(m.endcap_rms[i]) << '\n';
  s << "rms_all," << num(m.rms_all) << '\n';
  s << "actuated_rms," << num(m.actuated_rms) << '\n';
  s << "unactuated_rms," << num(m.unactuated_rms) << '\n';
  s << "settle_time," << num(m.settle_time) << '\n';
  s << "mean_cov_trace," << num(m.mean_cov_trace) << '\n';
  s << "max_cov_trace," << num(m.max_cov_trace) << '\n';
  s << "final_cov_trace," << num(m.final_cov_trace) << '\n';
  s << "acceptance_rate," << num(m.acceptance_rate) << '\n';
  s << "lag," << num(m.lag) << '\n';
  s << "initial_true_face," << face_str(m.initial_true_face) << '\n';
  s << "initial_est_face," << face_str(m.initial_est_face) << '\n';
  s << "initial_face_correct," << (m.initial_face_correct ? 1 : 0) << '\n';
  for (std::size_t i = 0; i < m.true_transitions.size(); ++i) {
    const auto& t = m.true_transitions[i];
    s << "true_transition_" << i << ',' << num(t.time) << ' ' << face_str(t.to) << '\n';
    s << "true_transition_" << i << "_matched," << (m.transition_matched[i] ? 1 : 0) << '\n';
  }
  for (std::size_t i = 0; i < m.est_transitions.size(); ++i) {
    const auto& t = m.est_transitions[i];
    s << "est_transition_" << i << ',' << num(t.time) << ' ' << face_str(t.to) << '\n';
  }
  s << "all_transitions_detected," << (m.all_transitions_detected ? 1 : 0) << '\n';
  for (std::size_t i = 0; i < m.post_roll_centroid_error.size(); ++i) {
    s << "post_roll_centroid_error_" << i << ',' << num(m.post_roll_centroid_error[i]) << '\n';
  }
  s << "max_post_roll_centroid_error," << num(m.max_post_roll_centroid_error) << '\n';
  s << "post_roll_com_error," << num(m.post_roll_com_error) << '\n';
  for (std::size_t i = 0; i < m.recovery_time.size(); ++i) {
    s << "recovery_time_" << i << ',' << num(m.recovery_time[i]) << '\n';
    s << "spurious_peak_error_" << i << ',' << num(m.spurious_peak_error[i]) << '\n';
  }
  return s.str();
}

}  // namespace tensegrity::harness
