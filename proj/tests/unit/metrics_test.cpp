#include <gtest/gtest.h>

#include <cmath>

#include "tensegrity/metrics.hpp"
#include "tensegrity/structure.hpp"

using namespace tensegrity;
using namespace tensegrity::harness;

namespace {

Trajectory sampled(double end, double dt, const std::function<NodeMatrix(double)>& f) {
  Trajectory t;
  const int n = static_cast<int>(std::lround(end / dt));
  for (int k = 0; k <= n; ++k) {
    t.time.push_back(k * dt);
    t.nodes.push_back(f(k * dt));
  }
  return t;
}

EstimateTrajectory estimate_of(const Trajectory& t, const Eigen::RowVector3d& shift = Eigen::RowVector3d::Zero()) {
  EstimateTrajectory e;
  e.time = t.time;
  for (const auto& n : t.nodes) {
    e.nodes.push_back(n.rowwise() + shift);
    e.node_variance.push_back(Eigen::VectorXd::Constant(n.rows(), 1e-4));
    e.cov_trace.push_back(0.5);
  }
  return e;
}

NodeMatrix resting() {
  const Superball ball = build_superball();
  return rest_on_face(ball.nominal_nodes, ball.closed_faces[0], 0.0);
}

}  // namespace

TEST(Interpolate, LinearAndClamped) {
  Trajectory t;
  t.time = {0.0, 1.0};
  NodeMatrix a = NodeMatrix::Zero(1, 3), b(1, 3);
  b << 2, 4, 6;
  t.nodes = {a, b};
  EXPECT_EQ(interpolate(t, 0.25), (NodeMatrix(1, 3) << 0.5, 1, 1.5).finished());
  EXPECT_EQ(interpolate(t, -1.0), a);
  EXPECT_EQ(interpolate(t, 3.0), b);
  EXPECT_THROW(interpolate(Trajectory{}, 0.0), MetricsError);
}

TEST(LowestFace, SortedIndices) {
  NodeMatrix n(5, 3);
  n << 0, 0, 3, 0, 0, 0.2, 0, 0, 1, 0, 0, 0.1, 0, 0, 0.0;
  EXPECT_EQ(lowest_face(n), (Face{1, 3, 4}));
}

TEST(ComputeMetrics, IdenticalTrajectoriesScoreZero) {
  const NodeMatrix base = resting();
  const auto truth = sampled(20.0, 0.01, [&](double t) {
    NodeMatrix n = base;
    n.col(0).array() += 0.1 * std::sin(t);
    return n;
  });
  const auto m = compute_metrics(truth, estimate_of(truth), MetricsConfig{}, MetricsContext{});
  EXPECT_EQ(m.rms_all, 0.0);
  for (double r : m.endcap_rms) EXPECT_EQ(r, 0.0);
  EXPECT_EQ(m.settle_time, 0.0);
  EXPECT_TRUE(m.initial_face_correct);
}

TEST(ComputeMetrics, ConstantOffset) {
  const NodeMatrix base = resting();
  const auto truth = sampled(20.0, 0.1, [&](double) { return base; });
  MetricsContext ctx;
  ctx.actuated_endcap = 3;
  ctx.unactuated_endcap = 5;
  ctx.post_roll = {{12.0, 18.0}};
  const auto m = compute_metrics(truth, estimate_of(truth, {0.1, 0, 0}), MetricsConfig{}, ctx);
  EXPECT_NEAR(m.rms_all, 0.1, 1e-12);
  EXPECT_NEAR(m.unactuated_rms, 0.1, 1e-12);
  EXPECT_NEAR(m.max_post_roll_centroid_error, 0.1, 1e-12);
  EXPECT_NEAR(m.post_roll_com_error, 0.1, 1e-12);
  EXPECT_NEAR(rms_error(truth, estimate_of(truth, {0, 0.1, 0}), 7, 0.0), 0.1, 1e-12);
}

TEST(ComputeMetrics, EmptyWindowThrows) {
  const NodeMatrix base = resting();
  const auto truth = sampled(5.0, 0.1, [&](double) { return base; });
  EXPECT_THROW(compute_metrics(truth, estimate_of(truth), MetricsConfig{}, MetricsContext{}), MetricsError);
  EXPECT_THROW(rms_error(truth, estimate_of(truth), 0, 6.0), MetricsError);
  EstimateTrajectory late = estimate_of(truth);
  for (double& t : late.time) t += 100.0;
  MetricsConfig c;
  c.settle = 0.0;
  EXPECT_THROW(compute_metrics(truth, late, c, MetricsContext{}), MetricsError);
}

TEST(ComputeMetrics, SettleTime) {
  const NodeMatrix base = resting();
  const auto truth = sampled(20.0, 0.1, [&](double) { return base; });
  EstimateTrajectory e = estimate_of(truth);
  for (std::size_t k = 0; k < e.time.size(); ++k) {
    if (e.time[k] < 4.05) e.nodes[k].array() += 0.5;
  }
  MetricsContext ctx;
  ctx.filter_start = 1.0;
  const auto m = compute_metrics(truth, e, MetricsConfig{}, ctx);
  EXPECT_NEAR(m.settle_time, 3.1, 1e-9);
}

TEST(DetectFaces, SyntheticRollScript) {
  const Superball ball = build_superball();
  const std::vector<Face> faces{ball.closed_faces[0], ball.closed_faces[3], ball.closed_faces[5]};
  std::vector<NodeMatrix> poses;
  for (const auto& f : faces) poses.push_back(rest_on_face(ball.nominal_nodes, f, 0.0));
  const std::vector<double> scripted{4.0, 9.0};
  const double roll = 0.4;
  const auto truth = sampled(15.0, 0.01, [&](double t) {
    for (std::size_t k = scripted.size(); k-- > 0;) {
      if (t >= scripted[k]) {
        const double w = std::min(1.0, (t - scripted[k]) / roll);
        return NodeMatrix((1.0 - w) * poses[k] + w * poses[k + 1]);
      }
    }
    return poses[0];
  });
  const MetricsConfig c;
  const auto h = detect_faces(truth.time, truth.nodes, c.face_hysteresis, c.face_dwell);
  auto sorted = [](Face f) {
    std::sort(f.begin(), f.end());
    return f;
  };
  EXPECT_EQ(h.initial, sorted(faces[0]));
  ASSERT_EQ(h.transitions.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(h.transitions[k].time, scripted[k], 1.0);
    EXPECT_EQ(h.transitions[k].to, sorted(faces[k + 1]));
    EXPECT_EQ(h.transitions[k].from, sorted(faces[k]));
  }
  EXPECT_EQ(h.face_at(6.0), sorted(faces[1]));

  const auto m = compute_metrics(truth, estimate_of(truth), c, MetricsContext{});
  EXPECT_TRUE(m.all_transitions_detected);
  EXPECT_EQ(m.est_transitions.size(), 2u);
}

TEST(DetectFaces, BriefDipIsIgnored) {
  const Superball ball = build_superball();
  const NodeMatrix a = rest_on_face(ball.nominal_nodes, ball.closed_faces[0], 0.0);
  const NodeMatrix b = rest_on_face(ball.nominal_nodes, ball.closed_faces[3], 0.0);
  const auto truth = sampled(5.0, 0.01, [&](double t) { return t > 2.0 && t < 2.3 ? b : a; });
  EXPECT_TRUE(detect_faces(truth.time, truth.nodes, 0.03, 0.5).transitions.empty());
}

TEST(Lag, DelayedEstimateIsPositive) {
  const NodeMatrix base = resting();
  auto motion = [&](double t) {
    NodeMatrix n = base;
    n(2, 0) += 0.2 * std::sin(2 * M_PI * t / 4.0) + 0.05 * std::sin(2 * M_PI * t / 1.7);
    return n;
  };
  const auto truth = sampled(30.0, 0.01, motion);
  for (double delay : {0.2, -0.15}) {
    EstimateTrajectory e;
    for (int k = 0; k <= 300; ++k) {
      e.time.push_back(0.1 * k);
      e.nodes.push_back(motion(0.1 * k - delay));
      e.node_variance.push_back(Eigen::VectorXd::Constant(12, 1e-4));
      e.cov_trace.push_back(1.0);
    }
    EXPECT_NEAR(estimate_lag(truth, e, 2, 5.0, 1.0, 0.005), delay, 0.006);
  }
}

TEST(Spurious, RecoveryTime) {
  const NodeMatrix base = resting();
  const auto truth = sampled(30.0, 0.1, [&](double) { return base; });
  EstimateTrajectory e = estimate_of(truth);
  for (std::size_t k = 0; k < e.time.size(); ++k) {
    if (e.time[k] >= 20.0 - 1e-9 && e.time[k] < 21.5) e.nodes[k](4, 2) += 0.3;
  }
  MetricsContext ctx;
  ctx.spurious_times = {20.0};
  const auto m = compute_metrics(truth, e, MetricsConfig{}, ctx);
  ASSERT_EQ(m.recovery_time.size(), 1u);
  EXPECT_NEAR(m.recovery_time[0], 1.5, 1e-6);
  EXPECT_NEAR(m.spurious_peak_error[0], 0.3, 1e-12);
}

TEST(Serialization, JsonAndCsvCarryTheSameNumbers) {
  const NodeMatrix base = resting();
  const auto truth = sampled(20.0, 0.1, [&](double) { return base; });
  const auto m = compute_metrics(truth, estimate_of(truth, {0.1, 0, 0}), MetricsConfig{}, MetricsContext{});
  const auto j = to_json(m);
  EXPECT_NEAR(j.at("rms_all").get<double>(), 0.1, 1e-12);
  EXPECT_EQ(j.at("endcap_rms").size(), 12u);
  const std::string csv = to_csv(m);
  EXPECT_EQ(csv.rfind("metric,value\n", 0), 0u);
  EXPECT_NE(csv.find("\nrms_all,0.1\n"), std::string::npos);
}
