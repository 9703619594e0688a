#include "tensegrity/structure.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tensegrity {

TensegrityModel::TensegrityModel(Eigen::MatrixXi connectivity, std::vector<MemberProperties> members,
                                 std::vector<double> node_masses)
    : connectivity_(std::move(connectivity)),
      members_(std::move(members)),
      node_masses_(std::move(node_masses)) {
  const int m = member_count();
  plus_.assign(m, -1);
  minus_.assign(m, -1);
  for (int k = 0; k < m; ++k) {
    int plus_count = 0;
    int minus_count = 0;
    bool other = false;
    for (int i = 0; i < node_count(); ++i) {
      const int c = connectivity_(k, i);
      if (c == 1) {
        ++plus_count;
        plus_[k] = i;
      } else if (c == -1) {
        ++minus_count;
        minus_[k] = i;
      } else if (c != 0) {
        other = true;
      }
    }
    if (plus_count != 1 || minus_count != 1 || other) {
      plus_[k] = -1;
      minus_[k] = -1;
    }
  }
  for (int k = 0; k < static_cast<int>(members_.size()); ++k) {
    if (members_[k].actuated) actuated_.push_back(k);
  }
}

TensegrityModel TensegrityModel::from_edges(int node_count,
                                            const std::vector<std::pair<int, int>>& edges,
                                            std::vector<MemberProperties> members,
                                            std::vector<double> node_masses) {
  Eigen::MatrixXi c = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(edges.size()), node_count);
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto [a, b] = edges[k];
    if (a < 0 || b < 0 || a >= node_count || b >= node_count || a == b) {
      throw ValidationError("member " + std::to_string(k) + " has invalid endpoints");
    }
    c(static_cast<Eigen::Index>(k), std::min(a, b)) = 1;
    c(static_cast<Eigen::Index>(k), std::max(a, b)) = -1;
  }
  return TensegrityModel(std::move(c), std::move(members), std::move(node_masses));
}

std::vector<int> TensegrityModel::bar_indices() const {
  std::vector<int> bars;
  for (int k = 0; k < static_cast<int>(members_.size()); ++k) {
    if (members_[k].kind == MemberKind::Bar) bars.push_back(k);
  }
  return bars;
}

Eigen::VectorXd TensegrityModel::rest_lengths() const {
  Eigen::VectorXd l0(static_cast<Eigen::Index>(members_.size()));
  for (std::size_t k = 0; k < members_.size(); ++k) l0(static_cast<Eigen::Index>(k)) = members_[k].rest_length;
  return l0;
}

std::vector<std::string> validate_model(const TensegrityModel& model) {
  std::vector<std::string> out;
  const int n = model.node_count();
  const int m = model.member_count();
  if (n == 0) out.emplace_back("model has no nodes");
  if (static_cast<int>(model.members().size()) != m) {
    out.push_back("member property count " + std::to_string(model.members().size()) +
                  " does not match connectivity rows " + std::to_string(m));
  }
  if (static_cast<int>(model.node_masses().size()) != n) {
    out.push_back("node mass count " + std::to_string(model.node_masses().size()) +
                  " does not match node count " + std::to_string(n));
  }
  for (int k = 0; k < m; ++k) {
    int plus = 0;
    int minus = 0;
    int other = 0;
    for (int i = 0; i < n; ++i) {
      const int c = model.connectivity()(k, i);
      plus += (c == 1);
      minus += (c == -1);
      other += (c != 0 && c != 1 && c != -1);
    }
    if (plus != 1 || minus != 1 || other != 0) {
      std::ostringstream s;
      s << "connectivity row " << k << " has " << plus << " (+1) and " << minus << " (-1) entries";
      if (other) s << " and " << other << " entries outside {-1,0,1}";
      out.push_back(s.str());
    }
  }
  int cables = 0;
  for (std::size_t k = 0; k < model.members().size(); ++k) {
    const auto& p = model.members()[k];
    const std::string tag = "member " + std::to_string(k);
    if (!(p.stiffness > 0.0)) out.push_back(tag + ": stiffness must be positive");
    if (!(p.damping >= 0.0)) out.push_back(tag + ": damping must be non-negative");
    if (!(p.rest_length > 0.0)) out.push_back(tag + ": rest length must be positive");
    if (p.kind == MemberKind::Bar && p.actuated) out.push_back(tag + ": bars cannot be actuated");
    cables += (p.kind == MemberKind::Cable);
  }
  if (static_cast<int>(model.actuated_indices().size()) > cables) {
    out.emplace_back("more actuated members than cables");
  }
  for (std::size_t i = 0; i < model.node_masses().size(); ++i) {
    if (!(model.node_masses()[i] > 0.0)) {
      out.push_back("node " + std::to_string(i) + ": mass must be positive");
    }
  }
  return out;
}

void require_valid(const TensegrityModel& model) {
  const auto violations = validate_model(model);
  if (violations.empty()) return;
  std::string msg = "invalid tensegrity model:";
  for (const auto& v : violations) msg += "\n  " + v;
  throw ValidationError(msg);
}

Superball build_superball(const SuperballParams& p) {
  const double values[] = {p.rod_length,      p.bar_stiffness,    p.cable_stiffness,
                           p.cable_rest_ratio, p.node_mass};
  for (double v : values) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError("superball parameters must be positive");
  }
  if (!(p.bar_damping >= 0.0) || !(p.cable_damping >= 0.0)) {
    throw ValidationError("superball damping must be non-negative");
  }

  // Regular icosahedron (0, +-1, +-phi) and cyclic permutations. Bars join
  // vertices that differ only in the sign of the phi coordinate, which gives
  // three orthogonal pairs of parallel bars.
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  const double scale = p.rod_length / (2.0 * phi);
  NodeMatrix nodes(12, 3);
  int row = 0;
  for (int axis = 0; axis < 3; ++axis) {
    for (double s : {1.0, -1.0}) {
      for (double t : {1.0, -1.0}) {
        Eigen::Vector3d v = Eigen::Vector3d::Zero();
        v((axis + 1) % 3) = s;
        v((axis + 2) % 3) = t * phi;
        nodes.row(row++) = scale * v.transpose();
      }
    }
  }

  std::vector<std::pair<int, int>> edges;
  std::vector<MemberProperties> members;
  for (int b = 0; b < 6; ++b) {
    edges.emplace_back(2 * b, 2 * b + 1);
    members.push_back({MemberKind::Bar, p.bar_stiffness, p.bar_damping, p.rod_length, false});
  }

  // Cables are the icosahedron edges (length 2*scale) except the six short
  // gaps between the ends of parallel bars (same group of four nodes).
  const double edge = 2.0 * scale;
  std::vector<std::pair<int, int>> cables;
  for (int a = 0; a < 12; ++a) {
    for (int b = a + 1; b < 12; ++b) {
      const double d = (nodes.row(a) - nodes.row(b)).norm();
      if (std::abs(d - edge) < 1e-9 * p.rod_length && a / 4 != b / 4) cables.emplace_back(a, b);
    }
  }

  // Closed faces: cable triangles. They split into two classes of four by the
  // parity of their outward direction; the even class partitions the nodes.
  auto is_cable = [&](int a, int b) {
    return std::find(cables.begin(), cables.end(), std::make_pair(std::min(a, b), std::max(a, b))) !=
           cables.end();
  };
  std::vector<std::array<int, 3>> faces;
  for (int a = 0; a < 12; ++a)
    for (int b = a + 1; b < 12; ++b)
      for (int c = b + 1; c < 12; ++c)
        if (is_cable(a, b) && is_cable(b, c) && is_cable(a, c)) faces.push_back({a, b, c});

  std::vector<std::pair<int, int>> actuated;
  for (const auto& f : faces) {
    const Eigen::Vector3d centroid = (nodes.row(f[0]) + nodes.row(f[1]) + nodes.row(f[2])).transpose();
    const int negatives = (centroid.x() < 0) + (centroid.y() < 0) + (centroid.z() < 0);
    if (negatives % 2 == 0) {
      actuated.emplace_back(f[0], f[1]);
      actuated.emplace_back(f[1], f[2]);
      actuated.emplace_back(f[0], f[2]);
    }
  }

  for (const auto& e : cables) {
    const bool act = std::find(actuated.begin(), actuated.end(), e) != actuated.end();
    edges.push_back(e);
    members.push_back({MemberKind::Cable, p.cable_stiffness, p.cable_damping, p.cable_rest_ratio * edge, act});
  }

  Superball out;
  out.model = TensegrityModel::from_edges(12, edges, std::move(members), std::vector<double>(12, p.node_mass));
  out.nominal_nodes = nodes;
  out.closed_faces = std::move(faces);
  require_valid(out.model);
  return out;
}

MemberGeometry member_geometry(const TensegrityModel& model, const NodeMatrix& nodes,
                               const NodeMatrix& velocities, double min_length) {
  const int m = model.member_count();
  if (nodes.rows() != model.node_count() || velocities.rows() != model.node_count()) {
    throw ValidationError("node matrix does not match model node count");
  }
  MemberGeometry g;
  g.vectors.resize(m, 3);
  g.relative_velocities.resize(m, 3);
  g.lengths.resize(m);
  g.length_rates.resize(m);
  for (int k = 0; k < m; ++k) {
    const int i = model.plus_node(k);
    const int j = model.minus_node(k);
    if (i < 0) throw ValidationError("member " + std::to_string(k) + " has malformed connectivity");
    g.vectors.row(k) = nodes.row(i) - nodes.row(j);
    g.relative_velocities.row(k) = velocities.row(i) - velocities.row(j);
    const double len = g.vectors.row(k).norm();
    if (!(len > min_length)) {
      throw GeometryError("member " + std::to_string(k) + " has coincident endpoints");
    }
    g.lengths(k) = len;
    g.length_rates(k) = g.vectors.row(k).dot(g.relative_velocities.row(k)) / len;
  }
  return g;
}

MemberGeometry member_geometry(const TensegrityModel& model, const NodeMatrix& nodes) {
  return member_geometry(model, nodes, NodeMatrix::Zero(nodes.rows(), 3));
}

NodeMatrix rest_on_face(const NodeMatrix& nodes, const std::array<int, 3>& face, double z) {
  const Eigen::Vector3d a = nodes.row(face[0]).transpose();
  const Eigen::Vector3d b = nodes.row(face[1]).transpose();
  const Eigen::Vector3d c = nodes.row(face[2]).transpose();
  Eigen::Vector3d normal = (b - a).cross(c - a);
  if (normal.norm() < 1e-12) throw GeometryError("face is degenerate");
  normal.normalize();
  const Eigen::Vector3d centroid = nodes.colwise().mean().transpose();
  if (normal.dot(centroid - a) > 0) normal = -normal;  // outward

  const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(normal, -Eigen::Vector3d::UnitZ());
  NodeMatrix out(nodes.rows(), 3);
  for (Eigen::Index i = 0; i < nodes.rows(); ++i) {
    out.row(i) = (q * (nodes.row(i).transpose() - centroid)).transpose();
  }
  const double face_z = out(face[0], 2);
  const Eigen::RowVector3d face_centroid = (out.row(face[0]) + out.row(face[1]) + out.row(face[2])) / 3.0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out(i, 0) -= face_centroid(0);
    out(i, 1) -= face_centroid(1);
    out(i, 2) += z - face_z;
  }
  return out;
}

}  // namespace tensegrity
