#pragma once

#include <Eigen/Dense>

#include <vector>

#include "tensegrity/structure.hpp"

namespace tensegrity {

inline constexpr double kGravity = 9.81;

/// Flat ground at `height` with a penalty normal force and regularized
/// Coulomb friction (linear in slip speed below `slip_velocity`).
struct GroundModel {
  double height = 0.0;
  double friction = 0.8;
  double stiffness = 1.0e4;
  double damping = 150.0;
  double slip_velocity = 0.05;
};

struct Environment {
  GroundModel ground;
  bool ground_contact = true;
  double gravity = kGravity;  // along -z
};

/// Positions and velocities of every node.
struct NodeState {
  NodeMatrix positions;
  NodeMatrix velocities;
};

/// Stacked state y in R^{6n}: positions (node-major xyz) then velocities.
using StateVector = Eigen::VectorXd;

StateVector stack_state(const NodeState& state);
NodeState unstack_state(const StateVector& y);

/// Row-major n x 3l matrix; column block b (3 columns) belongs to simulation b.
using BatchMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// l parallel simulations concatenated column-wise.
struct BatchState {
  BatchMatrix positions;
  BatchMatrix velocities;

  int block_count() const { return static_cast<int>(positions.cols() / 3); }
  NodeState block(int b) const;
  void set_block(int b, const NodeState& s);
  static BatchState from_blocks(const std::vector<NodeState>& blocks);
};

/// Member force densities q_k = K_k (1 - L0_k / L_k) + c_k Ldot_k / L_k, positive
/// in tension. The damping term resists the length rate. Cable rows are zero
/// whenever the total tension K(L - L0) + c Ldot is negative.
Eigen::VectorXd force_densities(const TensegrityModel& model, const Eigen::VectorXd& lengths,
                                const Eigen::VectorXd& length_rates, const Eigen::VectorXd& rest_lengths);

/// Nodal forces exerted by the members, -C^T diag(q) C N, evaluated as
/// -C^T U^q with U^q = diag(q) U. Positive q is tension and pulls the two
/// endpoints together.
NodeMatrix member_nodal_forces(const TensegrityModel& model, const Eigen::VectorXd& q, const NodeMatrix& member_vectors);

NodeMatrix ground_forces(const NodeMatrix& nodes, const NodeMatrix& velocities, const GroundModel& ground);

/// M^{-1} (F_m + F_g) - G.
NodeMatrix accelerations(const TensegrityModel& model, const NodeMatrix& member_forces,
                         const NodeMatrix& ground_forces, double gravity = kGravity);

/// Full per-member rest lengths with actuated cables replaced by `commands`
/// (one entry per actuated cable, in actuated_indices() order).
Eigen::VectorXd apply_rest_length_commands(const TensegrityModel& model, const Eigen::VectorXd& commands);

/// Fixed-step RK4 integrator for the spring-mass net.
///
/// Immutable after construction; the stepping functions are const and can be
/// called concurrently.
class Dynamics {
 public:
  Dynamics(TensegrityModel model, Environment env = {});

  const TensegrityModel& model() const { return model_; }
  const Environment& environment() const { return env_; }
  int node_count() const { return n_; }

  /// Nodal accelerations for one state. `rest` holds all m rest lengths.
  NodeMatrix accelerations(const NodeState& state, const Eigen::VectorXd& rest) const;

  NodeState step(const NodeState& state, const Eigen::VectorXd& commands, double dt) const;
  NodeState propagate(const NodeState& state, const Eigen::VectorXd& commands, double dt, int steps) const;

  /// One RK4 step of every block. Block b of the result equals step() on block b.
  BatchState step_batch(const BatchState& batch, const Eigen::VectorXd& commands, double dt) const;
  /// `steps` RK4 steps of every block, in place. Throws DivergenceError naming
  /// the first block that became non-finite.
  void propagate_batch(BatchState& batch, const Eigen::VectorXd& commands, double dt, int steps) const;

  /// Kinetic + elastic + gravitational + ground-penalty energy.
  double energy(const NodeState& state, const Eigen::VectorXd& rest) const;
  /// Total linear momentum.
  Eigen::Vector3d momentum(const NodeState& state) const;
  /// Member tensions q_k L_k (negative for compressed bars).
  Eigen::VectorXd tensions(const NodeState& state, const Eigen::VectorXd& rest) const;

 private:
  void eval(const double* pos, const double* vel, const double* rest, double* acc) const;
  void rk4(double* pos, double* vel, const double* rest, double dt, double* work) const;
  Eigen::VectorXd rest_for(const Eigen::VectorXd& commands, double dt) const;

  TensegrityModel model_;
  Environment env_;
  int n_ = 0;
  int m_ = 0;
  std::vector<int> plus_;
  std::vector<int> minus_;
  std::vector<double> stiffness_;
  std::vector<double> damping_;
  std::vector<char> is_cable_;
  std::vector<double> inv_mass_;
};

/// Rate-limited spool: rest lengths move toward their targets at no more
/// than `max_rate` m/s.
class SpoolActuator {
 public:
  SpoolActuator(Eigen::VectorXd initial, double max_rate);
  const Eigen::VectorXd& current() const { return current_; }
  const Eigen::VectorXd& advance(const Eigen::VectorXd& target, double dt);

 private:
  Eigen::VectorXd current_;
  double max_rate_;
};

}  // namespace tensegrity
