#include <gtest/gtest.h>

#include <random>

#include "tensegrity/harness.hpp"
#include "tensegrity/ranging.hpp"
#include "tensegrity/scenario_config.hpp"
#include "tensegrity/tensegrity_filter.hpp"

using namespace tensegrity;
using namespace tensegrity::estimation;

namespace {

TensegrityModel single_bar() {
  MemberProperties bar;
  bar.kind = MemberKind::Bar;
  bar.stiffness = 1e4;
  bar.rest_length = 1.0;
  return TensegrityModel::from_edges(2, {{0, 1}}, {bar}, {1.0, 1.0});
}

Eigen::VectorXd state_of(const NodeMatrix& nodes) {
  NodeState s{nodes, NodeMatrix::Zero(nodes.rows(), 3)};
  return stack_state(s);
}

std::map<int, Eigen::Vector3d> default_anchors(int first_id) {
  std::map<int, Eigen::Vector3d> out;
  const auto pos = harness::anchor_positions(harness::AnchorConfig{});
  for (std::size_t a = 0; a < pos.size(); ++a) out[first_id + static_cast<int>(a)] = pos[a];
  return out;
}

// Noise-free bundle of every anchor range and every bar's pitch and heading.
ukf::MeasurementBundle exact_bundle(const TensegrityModel& model, const NodeMatrix& nodes,
                                    const std::map<int, Eigen::Vector3d>& anchors, double mount, double t,
                                    bool ranges = true) {
  ukf::MeasurementBundle b;
  b.time = t;
  for (int bar = 0; bar < static_cast<int>(model.bar_indices().size()); ++bar) {
    const auto obs = angle_observations(bar, bar_angles(model, nodes, bar), AngleMode::PitchHeading);
    b.angles.insert(b.angles.end(), obs.begin(), obs.end());
  }
  if (ranges) {
    for (const auto& [id, p] : anchors) {
      for (int i = 0; i < model.node_count(); ++i) {
        b.ranges.push_back({id, i, (p - ranging::sensor_position(model, nodes, i, mount)).norm()});
      }
    }
  }
  return b;
}

struct RestingRobot {
  harness::ScenarioConfig config = harness::default_config(harness::ScenarioKind::Local);
  harness::LoadedModel loaded = harness::load_model(config.model);
  Dynamics dynamics{loaded.model, [&] {
                      Environment e;
                      e.ground = config.ground;
                      return e;
                    }()};
  NodeMatrix shape;
  Eigen::VectorXd commands;

  RestingRobot() {
    shape = harness::settled_shape(dynamics, loaded.nominal, loaded.base_face, config.presettle, config.sim_dt);
    const auto& act = loaded.model.actuated_indices();
    commands.resize(static_cast<Eigen::Index>(act.size()));
    for (std::size_t a = 0; a < act.size(); ++a) commands(a) = loaded.model.member(act[a]).rest_length;
  }

  ukf::UkfParams params() const {
    ukf::UkfParams p;
    p.state_noise = config.filter.state_noise;
    p.angle_noise = config.filter.angle_noise;
    p.range_noise = config.filter.range_noise;
    return p;
  }
};

}  // namespace

TEST(BarAngles, VerticalBar) {
  const auto model = single_bar();
  NodeMatrix nodes(2, 3);
  nodes << 0, 0, 0, 0, 0, 1;
  EXPECT_NEAR(bar_angles(model, nodes, 0).pitch, M_PI / 2, 1e-12);
  nodes << 0, 0, 1, 0, 0, 0;
  EXPECT_NEAR(bar_angles(model, nodes, 0).pitch, -M_PI / 2, 1e-12);
}

TEST(BarAngles, HorizontalBar) {
  const auto model = single_bar();
  NodeMatrix nodes(2, 3);
  nodes << 1, 1, 0, 1, 2, 0;
  const auto a = bar_angles(model, nodes, 0);
  EXPECT_NEAR(a.pitch, 0.0, 1e-12);
  EXPECT_NEAR(a.heading, M_PI / 2, 1e-12);
  EXPECT_THROW(bar_angles(model, nodes, 1), GeometryError);
}

TEST(AngleObservations, GimbalDropsHeading) {
  EXPECT_EQ(angle_observations(2, {0.3, 1.0}, AngleMode::PitchHeading).size(), 2u);
  EXPECT_EQ(angle_observations(2, {0.3, 1.0}, AngleMode::Pitch).size(), 1u);
  const auto steep = angle_observations(2, {1.5, 1.0}, AngleMode::PitchHeading);
  ASSERT_EQ(steep.size(), 1u);
  EXPECT_EQ(steep[0].bar, 2);
  EXPECT_EQ(steep[0].component, 0);
}

TEST(TensegrityMeasurement, ThreeFourFive) {
  const auto model = single_bar();
  NodeMatrix nodes(2, 3);
  nodes << 3, 4, 0, 3, 4, 1;
  const TensegrityMeasurement h(model, {{10, Eigen::Vector3d::Zero()}}, 0.0);
  ukf::MeasurementBundle b;
  b.ranges.push_back({10, 0, 0.0});
  EXPECT_NEAR(h.observe(state_of(nodes), b)(0), 5.0, 1e-12);
}

TEST(TensegrityMeasurement, MatchesBruteForcePairwiseDistances) {
  const Superball ball = build_superball();
  const auto anchors = default_anchors(12);
  const double mount = 0.1;
  const TensegrityMeasurement h(ball.model, anchors, mount);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 0.05);
  NodeMatrix nodes = ball.nominal_nodes;
  for (int i = 0; i < 12; ++i) nodes.row(i) += Eigen::RowVector3d(g(rng), g(rng), 1.0 + g(rng));

  std::map<int, Eigen::Vector3d> where = anchors;
  for (int i = 0; i < 12; ++i) {
    const Eigen::Vector3d p = nodes.row(i).transpose();
    Eigen::Vector3d q;
    for (int k : ball.model.bar_indices()) {
      if (ball.model.plus_node(k) == i) q = nodes.row(ball.model.minus_node(k)).transpose();
      if (ball.model.minus_node(k) == i) q = nodes.row(ball.model.plus_node(k)).transpose();
    }
    where[i] = p + mount * (q - p).normalized();
  }
  ukf::MeasurementBundle b;
  for (const auto& [a, pa] : where)
    for (const auto& [c, pc] : where)
      if (a < c) b.ranges.push_back({a, c, 0.0});
  const Eigen::VectorXd z = h.observe(state_of(nodes), b);
  ASSERT_EQ(z.size(), 190);
  for (int k = 0; k < z.size(); ++k) {
    EXPECT_NEAR(z(k), (where[b.ranges[k].a] - where[b.ranges[k].b]).norm(), 1e-12);
  }
}

TEST(TensegrityMeasurement, AnglesComeFirst) {
  const Superball ball = build_superball();
  const TensegrityMeasurement h(ball.model, default_anchors(12), 0.1);
  ukf::MeasurementBundle b;
  b.ranges.push_back({12, 0, 0.0});
  b.angles.push_back({3, 0, 0.0});
  const Eigen::VectorXd z = h.observe(state_of(ball.nominal_nodes), b);
  EXPECT_NEAR(z(0), bar_angles(ball.model, ball.nominal_nodes, 3).pitch, 1e-15);
}

TEST(TensegrityMeasurement, RejectsBadIds) {
  const Superball ball = build_superball();
  EXPECT_THROW(TensegrityMeasurement(ball.model, {{3, Eigen::Vector3d::Zero()}}, 0.1), ukf::UkfError);
  const TensegrityMeasurement h(ball.model, default_anchors(12), 0.1);
  ukf::MeasurementBundle b;
  b.ranges.push_back({40, 0, 0.0});
  EXPECT_THROW(h.observe(state_of(ball.nominal_nodes), b), ukf::UkfError);
}

TEST(InitialBelief, RecoversRestingPose) {
  const RestingRobot r;
  const auto anchors = default_anchors(12);
  const auto bundle = exact_bundle(r.loaded.model, r.shape, anchors, 0.1, 0.0);
  const auto b = initial_belief(r.loaded.model, r.shape, anchors, bundle, 0.1, 0.25);
  const NodeMatrix p = positions_of(b.mean);
  EXPECT_LT((p - r.shape).rowwise().norm().maxCoeff(), 1e-6);
  EXPECT_EQ(b.mean.tail(36).norm(), 0.0);
  EXPECT_EQ(b.cov, 0.25 * Eigen::MatrixXd::Identity(72, 72));
}

TEST(InitialBelief, NeedsThreeEndCaps) {
  const RestingRobot r;
  const auto anchors = default_anchors(12);
  auto bundle = exact_bundle(r.loaded.model, r.shape, anchors, 0.1, 0.0);
  std::erase_if(bundle.ranges, [](const ukf::RangeObservation& o) { return o.b > 1; });
  EXPECT_THROW(initial_belief(r.loaded.model, r.shape, anchors, bundle, 0.1), ukf::UkfError);
}

TEST(StationaryRobot, SettlesWithinFiveCentimetres) {
  const RestingRobot r;
  const auto anchors = default_anchors(12);
  std::vector<ukf::MeasurementBundle> bundles;
  for (int k = 0; k <= 150; ++k) bundles.push_back(exact_bundle(r.loaded.model, r.shape, anchors, 0.1, 0.1 * k));
  // Start from a shifted and rotated copy of the nominal shape.
  auto init = initial_belief(r.loaded.model, r.loaded.nominal, anchors, bundles[0], 0.1, r.config.filter.initial_variance);
  for (int i = 0; i < 12; ++i) init.mean.segment<3>(3 * i) += Eigen::Vector3d(0.15, -0.1, 0.05);
  const DynamicsProcess process(r.dynamics, r.config.sim_dt);
  const TensegrityMeasurement h(r.loaded.model, anchors, 0.1);
  const auto run = ukf::run_filter(bundles, {{0.0, r.commands}}, init, {0.0, 15.0, 0.1}, process, h, r.params());
  double sq = 0.0;
  int count = 0;
  for (const auto& s : run.steps) {
    if (s.time < 10.0 - 1e-9) continue;
    sq += (positions_of(s.mean) - r.shape).rowwise().squaredNorm().sum();
    count += 12;
  }
  ASSERT_GT(count, 0);
  EXPECT_LT(std::sqrt(sq / count), 0.05);
}

TEST(AngleOnly, HorizontalCovarianceGrows) {
  const RestingRobot r;
  std::vector<ukf::MeasurementBundle> bundles;
  for (int k = 1; k <= 200; ++k) bundles.push_back(exact_bundle(r.loaded.model, r.shape, {}, 0.1, 0.1 * k, false));
  ukf::Belief init{state_of(r.shape), r.config.filter.initial_variance * Eigen::MatrixXd::Identity(72, 72)};
  const DynamicsProcess process(r.dynamics, r.config.sim_dt);
  const TensegrityMeasurement h(r.loaded.model, {}, 0.1);
  // Angles fix the shape but not where it sits. Once the shape has settled
  // (10 s) the centroid's horizontal variance grows at least by the process
  // noise every step.
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 72);
  for (int i = 0; i < 12; ++i) {
    w(0, 3 * i) = 1.0 / 12;
    w(1, 3 * i + 1) = 1.0 / 12;
  }
  ukf::Belief b = init;
  std::vector<double> horizontal{(w * b.cov * w.transpose()).trace()};
  for (const auto& bundle : bundles) {
    b = ukf::predict(b, process, r.commands, 0.1, r.params());
    b = ukf::update(b, bundle, h, r.params()).posterior;
    horizontal.push_back((w * b.cov * w.transpose()).trace());
  }
  const double floor = 2.0 * r.params().state_noise / 12.0;
  for (std::size_t k = 101; k < horizontal.size(); ++k) {
    EXPECT_GT(horizontal[k] - horizontal[k - 1], floor) << "step " << k;
  }
  EXPECT_GT(horizontal[200] - horizontal[100], 100 * floor);
}
