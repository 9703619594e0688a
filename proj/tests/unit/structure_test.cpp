#include <gtest/gtest.h>

#include <random>
#include <set>

#include "tensegrity/structure.hpp"

using namespace tensegrity;

namespace {

NodeMatrix random_nodes(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  NodeMatrix nodes(n, 3);
  for (int i = 0; i < n; ++i) nodes.row(i) << u(rng), u(rng), u(rng);
  return nodes;
}

}  // namespace

TEST(Superball, Topology) {
  const Superball ball = build_superball();
  const auto& m = ball.model;
  EXPECT_EQ(m.node_count(), 12);
  EXPECT_EQ(m.member_count(), 30);
  EXPECT_EQ(m.actuated_indices().size(), 12u);
  EXPECT_EQ(m.bar_indices().size(), 6u);
  EXPECT_TRUE(validate_model(m).empty());

  std::vector<int> bars(12, 0);
  std::vector<int> cables(12, 0);
  std::vector<int> actuated(12, 0);
  for (int k = 0; k < m.member_count(); ++k) {
    const int a = m.plus_node(k);
    const int b = m.minus_node(k);
    ASSERT_GE(a, 0);
    ASSERT_GE(b, 0);
    auto& count = m.member(k).kind == MemberKind::Bar ? bars : cables;
    ++count[a];
    ++count[b];
    if (m.member(k).actuated) {
      ++actuated[a];
      ++actuated[b];
    }
  }
  for (int i = 0; i < 12; ++i) {
    EXPECT_EQ(bars[i], 1) << "node " << i;
    EXPECT_GE(cables[i], 3) << "node " << i;
    EXPECT_EQ(actuated[i], 2) << "node " << i;
  }
}

TEST(Superball, NominalShapeMatchesRestLengths) {
  const Superball ball = build_superball();
  const auto g = member_geometry(ball.model, ball.nominal_nodes);
  for (int k : ball.model.bar_indices()) EXPECT_NEAR(g.lengths(k), 1.5, 1e-12);
  for (int k = 0; k < ball.model.member_count(); ++k) {
    if (ball.model.member(k).kind == MemberKind::Cable) {
      EXPECT_NEAR(ball.model.member(k).rest_length, 0.85 * g.lengths(k), 1e-12);
    }
  }
}

TEST(Superball, ClosedFacesAreCableTriangles) {
  const Superball ball = build_superball();
  const auto& m = ball.model;
  EXPECT_EQ(ball.closed_faces.size(), 8u);
  std::set<std::pair<int, int>> cables;
  std::set<std::pair<int, int>> actuated;
  for (int k = 0; k < m.member_count(); ++k) {
    if (m.member(k).kind != MemberKind::Cable) continue;
    cables.emplace(m.plus_node(k), m.minus_node(k));
    if (m.member(k).actuated) actuated.emplace(m.plus_node(k), m.minus_node(k));
  }
  // The actuated cables close four node-disjoint triangles.
  std::set<int> covered;
  int fully_actuated = 0;
  for (const auto& f : ball.closed_faces) {
    const std::pair<int, int> e[3] = {{f[0], f[1]}, {f[1], f[2]}, {f[0], f[2]}};
    int act = 0;
    for (const auto& edge : e) {
      EXPECT_TRUE(cables.count(edge));
      act += static_cast<int>(actuated.count(edge));
    }
    if (act == 3) {
      ++fully_actuated;
      covered.insert(f.begin(), f.end());
    }
  }
  EXPECT_EQ(fully_actuated, 4);
  EXPECT_EQ(covered.size(), 12u);
}

TEST(Superball, ScalingDoublesDistances) {
  SuperballParams p;
  const auto a = build_superball(p);
  p.rod_length = 3.0;
  const auto b = build_superball(p);
  for (int i = 0; i < 12; ++i) {
    for (int j = i + 1; j < 12; ++j) {
      const double da = (a.nominal_nodes.row(i) - a.nominal_nodes.row(j)).norm();
      const double db = (b.nominal_nodes.row(i) - b.nominal_nodes.row(j)).norm();
      EXPECT_NEAR(db, 2.0 * da, 1e-12);
    }
  }
}

TEST(Superball, RejectsBadParameters) {
  SuperballParams p;
  p.rod_length = 0.0;
  EXPECT_THROW(build_superball(p), ValidationError);
  p = {};
  p.node_mass = -1.0;
  EXPECT_THROW(build_superball(p), ValidationError);
}

TEST(MemberGeometry, TwoNodes) {
  MemberProperties cable;
  cable.stiffness = 1.0;
  cable.rest_length = 1.0;
  const auto model = TensegrityModel::from_edges(2, {{0, 1}}, {cable}, {1.0, 1.0});
  NodeMatrix nodes(2, 3);
  nodes << 0, 0, 0, 1, 0, 0;
  const auto g = member_geometry(model, nodes);
  // +1 on node 0, -1 on node 1: U = N0 - N1.
  EXPECT_EQ(g.vectors.row(0), Eigen::RowVector3d(-1, 0, 0));
  EXPECT_DOUBLE_EQ(g.lengths(0), 1.0);
  EXPECT_DOUBLE_EQ(g.length_rates(0), 0.0);
}

TEST(MemberGeometry, MatchesDenseProduct) {
  const Superball ball = build_superball();
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const NodeMatrix nodes = random_nodes(12, rng);
    const NodeMatrix vel = random_nodes(12, rng);
    const auto g = member_geometry(ball.model, nodes, vel);
    const Eigen::MatrixXd c = ball.model.connectivity().cast<double>();
    const Eigen::MatrixXd u = c * Eigen::MatrixXd(nodes);
    const Eigen::MatrixXd v = c * Eigen::MatrixXd(vel);
    EXPECT_LT((Eigen::MatrixXd(g.vectors) - u).cwiseAbs().maxCoeff(), 1e-12);
    for (int k = 0; k < 30; ++k) {
      EXPECT_NEAR(g.lengths(k), u.row(k).norm(), 1e-12);
      EXPECT_NEAR(g.length_rates(k), u.row(k).dot(v.row(k)) / u.row(k).norm(), 1e-12);
    }
  }
}

TEST(MemberGeometry, StaticNodesHaveZeroRates) {
  const Superball ball = build_superball();
  const auto g = member_geometry(ball.model, ball.nominal_nodes);
  EXPECT_EQ(g.length_rates.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MemberGeometry, CoincidentEndpointsThrow) {
  const Superball ball = build_superball();
  NodeMatrix nodes = ball.nominal_nodes;
  nodes.row(1) = nodes.row(0);
  EXPECT_THROW(member_geometry(ball.model, nodes), GeometryError);
}

TEST(ValidateModel, ReportsDoublePlusRow) {
  const Superball ball = build_superball();
  Eigen::MatrixXi c = ball.model.connectivity();
  c.row(3).setZero();
  c(3, 0) = 1;
  c(3, 5) = 1;
  const TensegrityModel bad(c, ball.model.members(), ball.model.node_masses());
  const auto v = validate_model(bad);
  ASSERT_FALSE(v.empty());
  EXPECT_NE(v.front().find("row 3"), std::string::npos);
  EXPECT_THROW(require_valid(bad), ValidationError);
}

TEST(ValidateModel, ReportsZeroMass) {
  const Superball ball = build_superball();
  auto masses = ball.model.node_masses();
  masses[4] = 0.0;
  const TensegrityModel bad(ball.model.connectivity(), ball.model.members(), masses);
  const auto v = validate_model(bad);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v.front().find("node 4"), std::string::npos);
}

TEST(RestOnFace, FaceIsFlatAndLowest) {
  const Superball ball = build_superball();
  for (const auto& face : ball.closed_faces) {
    const NodeMatrix n = rest_on_face(ball.nominal_nodes, face, 0.2);
    for (int i : face) EXPECT_NEAR(n(i, 2), 0.2, 1e-12);
    EXPECT_GE(n.col(2).minCoeff(), 0.2 - 1e-12);
    // Rigid: distances preserved.
    EXPECT_NEAR((n.row(0) - n.row(7)).norm(), (ball.nominal_nodes.row(0) - ball.nominal_nodes.row(7)).norm(), 1e-12);
  }
}
