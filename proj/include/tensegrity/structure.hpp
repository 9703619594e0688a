#pragma once

#include <Eigen/Dense>

#include <array>
#include <string>
#include <vector>

#include "tensegrity/errors.hpp"

namespace tensegrity {

/// n x 3 matrix of Cartesian node coordinates (or velocities), one node per row.
using NodeMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

enum class MemberKind { Bar, Cable };

struct MemberProperties {
  MemberKind kind = MemberKind::Cable;
  double stiffness = 0.0;    // N/m
  double damping = 0.0;      // N s/m
  double rest_length = 0.0;  // m
  bool actuated = false;
};

/// Spring-mass-net description of a tensegrity.
///
/// The connectivity matrix is stored explicitly so malformed inputs can be
/// represented and diagnosed by validate_model(). Each well-formed row has a
/// +1 at the lower node index and a -1 at the higher one, so the member
/// vector U_k = C_k N points from the higher-index node to the lower-index one.
class TensegrityModel {
 public:
  TensegrityModel() = default;
  TensegrityModel(Eigen::MatrixXi connectivity, std::vector<MemberProperties> members,
                  std::vector<double> node_masses);

  /// Builds C from (a, b) endpoint pairs using the +1-at-lower-index convention.
  static TensegrityModel from_edges(int node_count,
                                    const std::vector<std::pair<int, int>>& edges,
                                    std::vector<MemberProperties> members,
                                    std::vector<double> node_masses);

  int node_count() const { return static_cast<int>(connectivity_.cols()); }
  int member_count() const { return static_cast<int>(connectivity_.rows()); }

  const Eigen::MatrixXi& connectivity() const { return connectivity_; }
  const std::vector<MemberProperties>& members() const { return members_; }
  const MemberProperties& member(int k) const { return members_[k]; }
  const std::vector<double>& node_masses() const { return node_masses_; }

  /// Indices (into members()) of actuated cables, ascending.
  const std::vector<int>& actuated_indices() const { return actuated_; }
  /// Index of the +1 node of member k, or -1 when the row is malformed.
  int plus_node(int k) const { return plus_[k]; }
  /// Index of the -1 node of member k, or -1 when the row is malformed.
  int minus_node(int k) const { return minus_[k]; }

  /// Indices of bar members, ascending.
  std::vector<int> bar_indices() const;
  /// Rest lengths of all members, in member order.
  Eigen::VectorXd rest_lengths() const;

 private:
  Eigen::MatrixXi connectivity_;
  std::vector<MemberProperties> members_;
  std::vector<double> node_masses_;
  std::vector<int> actuated_;
  std::vector<int> plus_;
  std::vector<int> minus_;
};

/// Returns human-readable descriptions of every violated model invariant.
std::vector<std::string> validate_model(const TensegrityModel& model);

/// Throws ValidationError listing all violations when the model is invalid.
void require_valid(const TensegrityModel& model);

struct SuperballParams {
  double rod_length = 1.5;
  double bar_stiffness = 1.0e4;
  double bar_damping = 50.0;
  double cable_stiffness = 600.0;
  double cable_damping = 20.0;
  /// Cable rest length as a fraction of the cable length in the nominal shape.
  double cable_rest_ratio = 0.85;
  double node_mass = 1.5;
};

/// Six-strut tensegrity with 12 nodes, 6 bars and 24 cables.
///
/// Node 2k and 2k+1 are the ends of bar k; bars come first in member order.
/// The 12 actuated cables are the edges of four node-disjoint closed
/// triangles, so every node carries exactly two actuated cables.
struct Superball {
  TensegrityModel model;
  NodeMatrix nominal_nodes;  // regular icosahedron scaled to rod_length
  /// Closed triangular faces (three cables each), node indices ascending.
  std::vector<std::array<int, 3>> closed_faces;
};

Superball build_superball(const SuperballParams& params = {});

struct MemberGeometry {
  NodeMatrix vectors;              // U = C N
  NodeMatrix relative_velocities;  // V = C dN/dt
  Eigen::VectorXd lengths;         // |U_k|
  Eigen::VectorXd length_rates;    // U_k . V_k / L_k
};

/// Member vectors, lengths and length rates. Throws GeometryError when a
/// member is shorter than `min_length`.
MemberGeometry member_geometry(const TensegrityModel& model, const NodeMatrix& nodes,
                               const NodeMatrix& velocities, double min_length = 1e-9);

/// Member geometry for static nodes (zero velocities).
MemberGeometry member_geometry(const TensegrityModel& model, const NodeMatrix& nodes);

/// Rigidly rotates/translates nodes so that `face` lies flat at height z
/// with the rest of the structure above it.
NodeMatrix rest_on_face(const NodeMatrix& nodes, const std::array<int, 3>& face, double z = 0.0);

}  // namespace tensegrity
