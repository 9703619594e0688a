#include "tensegrity/dynamics.hpp"

#include <algorithm>
#include <cmath>

namespace tensegrity {

StateVector stack_state(const NodeState& state) {
  const Eigen::Index n = state.positions.rows();
  StateVector y(6 * n);
  y.head(3 * n) = Eigen::Map<const Eigen::VectorXd>(state.positions.data(), 3 * n);
  y.tail(3 * n) = Eigen::Map<const Eigen::VectorXd>(state.velocities.data(), 3 * n);
  return y;
}

NodeState unstack_state(const StateVector& y) {
  if (y.size() % 6 != 0) throw ValidationError("state vector length must be a multiple of 6");
  const Eigen::Index n = y.size() / 6;
  NodeState s;
  s.positions = Eigen::Map<const NodeMatrix>(y.data(), n, 3);
  s.velocities = Eigen::Map<const NodeMatrix>(y.data() + 3 * n, n, 3);
  return s;
}

NodeState BatchState::block(int b) const {
  return {positions.middleCols(3 * b, 3), velocities.middleCols(3 * b, 3)};
}

void BatchState::set_block(int b, const NodeState& s) {
  positions.middleCols(3 * b, 3) = s.positions;
  velocities.middleCols(3 * b, 3) = s.velocities;
}

BatchState BatchState::from_blocks(const std::vector<NodeState>& blocks) {
  BatchState out;
  if (blocks.empty()) return out;
  const Eigen::Index n = blocks.front().positions.rows();
  out.positions.resize(n, 3 * static_cast<Eigen::Index>(blocks.size()));
  out.velocities.resize(n, 3 * static_cast<Eigen::Index>(blocks.size()));
  for (std::size_t b = 0; b < blocks.size(); ++b) out.set_block(static_cast<int>(b), blocks[b]);
  return out;
}

Eigen::VectorXd force_densities(const TensegrityModel& model, const Eigen::VectorXd& lengths,
                                const Eigen::VectorXd& length_rates, const Eigen::VectorXd& rest_lengths) {
  const int m = model.member_count();
  if (lengths.size() != m || length_rates.size() != m || rest_lengths.size() != m) {
    throw ValidationError("force_densities: dimension mismatch");
  }
  Eigen::VectorXd q(m);
  for (int k = 0; k < m; ++k) {
    const auto& p = model.member(k);
    const double len = lengths(k);
    if (!(len > 0.0)) throw GeometryError("member " + std::to_string(k) + " has non-positive length");
    if (!(rest_lengths(k) > 0.0)) throw ValidationError("member " + std::to_string(k) + " has non-positive rest length");
    const double tension = p.stiffness * (len - rest_lengths(k)) + p.damping * length_rates(k);
    q(k) = (p.kind == MemberKind::Cable && tension < 0.0) ? 0.0 : tension / len;
  }
  return q;
}

NodeMatrix member_nodal_forces(const TensegrityModel& model, const Eigen::VectorXd& q, const NodeMatrix& member_vectors) {
  const int m = model.member_count();
  if (q.size() != m || member_vectors.rows() != m) throw ValidationError("member_nodal_forces: dimension mismatch");
  NodeMatrix f = NodeMatrix::Zero(model.node_count(), 3);
  for (int k = 0; k < m; ++k) {
    const Eigen::RowVector3d uq = q(k) * member_vectors.row(k);
    f.row(model.plus_node(k)) -= uq;
    f.row(model.minus_node(k)) += uq;
  }
  return f;
}

namespace {

// Penalty normal force plus regularized Coulomb friction for one node.
inline void contact_force(const double* p, const double* v, const GroundModel& g, double* f) {
  const double depth = g.height - p[2];
  if (depth <= 0.0) return;
  double fn = g.stiffness * depth - g.damping * v[2];
  if (fn <= 0.0) return;
  const double speed = std::sqrt(v[0] * v[0] + v[1] * v[1]);
  const double scale = g.friction * fn / std::max(speed, g.slip_velocity);
  f[0] -= scale * v[0];
  f[1] -= scale * v[1];
  f[2] += fn;
}

}  // namespace

NodeMatrix ground_forces(const NodeMatrix& nodes, const NodeMatrix& velocities, const GroundModel& ground) {
  NodeMatrix f = NodeMatrix::Zero(nodes.rows(), 3);
  for (Eigen::Index i = 0; i < nodes.rows(); ++i) {
    contact_force(nodes.row(i).data(), velocities.row(i).data(), ground, f.row(i).data());
  }
  return f;
}

NodeMatrix accelerations(const TensegrityModel& model, const NodeMatrix& member_forces,
                         const NodeMatrix& ground_forces, double gravity) {
  const int n = model.node_count();
  if (member_forces.rows() != n || ground_forces.rows() != n) throw ValidationError("accelerations: dimension mismatch");
  NodeMatrix a(n, 3);
  for (int i = 0; i < n; ++i) {
    const double mass = model.node_masses()[i];
    if (!(mass > 0.0)) throw ValidationError("node " + std::to_string(i) + " has non-positive mass");
    a.row(i) = (member_forces.row(i) + ground_forces.row(i)) / mass;
    a(i, 2) -= gravity;
  }
  return a;
}

Eigen::VectorXd apply_rest_length_commands(const TensegrityModel& model, const Eigen::VectorXd& commands) {
  Eigen::VectorXd rest = model.rest_lengths();
  const auto& act = model.actuated_indices();
  if (commands.size() == 0) return rest;
  if (commands.size() != static_cast<Eigen::Index>(act.size())) {
    throw ValidationError("expected " + std::to_string(act.size()) + " rest-length commands, got " +
                          std::to_string(commands.size()));
  }
  for (std::size_t a = 0; a < act.size(); ++a) {
    const double c = commands(static_cast<Eigen::Index>(a));
    if (!(c > 0.0) || !std::isfinite(c)) throw ValidationError("rest-length commands must be positive");
    rest(act[a]) = c;
  }
  return rest;
}

Dynamics::Dynamics(TensegrityModel model, Environment env) : model_(std::move(model)), env_(env) {
  require_valid(model_);
  n_ = model_.node_count();
  m_ = model_.member_count();
  for (int k = 0; k < m_; ++k) {
    const auto& p = model_.member(k);
    plus_.push_back(model_.plus_node(k));
    minus_.push_back(model_.minus_node(k));
    stiffness_.push_back(p.stiffness);
    damping_.push_back(p.damping);
    is_cable_.push_back(p.kind == MemberKind::Cable);
  }
  for (double mass : model_.node_masses()) inv_mass_.push_back(1.0 / mass);
  const auto& g = env_.ground;
  if (!(g.friction >= 0.0) || !(g.stiffness > 0.0) || !(g.damping >= 0.0) || !(g.slip_velocity > 0.0)) {
    throw ValidationError("invalid ground model");
  }
}

void Dynamics::eval(const double* pos, const double* vel, const double* rest, double* acc) const {
  std::fill(acc, acc + 3 * n_, 0.0);
  for (int k = 0; k < m_; ++k) {
    const int i = 3 * plus_[k];
    const int j = 3 * minus_[k];
    const double ux = pos[i] - pos[j];
    const double uy = pos[i + 1] - pos[j + 1];
    const double uz = pos[i + 2] - pos[j + 2];
    const double len = std::sqrt(ux * ux + uy * uy + uz * uz);
    const double rate = (ux * (vel[i] - vel[j]) + uy * (vel[i + 1] - vel[j + 1]) + uz * (vel[i + 2] - vel[j + 2])) / len;
    const double tension = stiffness_[k] * (len - rest[k]) + damping_[k] * rate;
    if (is_cable_[k] && tension < 0.0) continue;
    const double q = tension / len;
    acc[i] -= q * ux;
    acc[i + 1] -= q * uy;
    acc[i + 2] -= q * uz;
    acc[j] += q * ux;
    acc[j + 1] += q * uy;
    acc[j + 2] += q * uz;
  }
  if (env_.ground_contact) {
    for (int i = 0; i < n_; ++i) contact_force(pos + 3 * i, vel + 3 * i, env_.ground, acc + 3 * i);
  }
  for (int i = 0; i < n_; ++i) {
    acc[3 * i] *= inv_mass_[i];
    acc[3 * i + 1] *= inv_mass_[i];
    acc[3 * i + 2] = acc[3 * i + 2] * inv_mass_[i] - env_.gravity;
  }
}

// Classic RK4 on (x, v). `work` must hold 9 * 3n doubles.
void Dynamics::rk4(double* pos, double* vel, const double* rest, double dt, double* work) const {
  const int d = 3 * n_;
  double* x = work;
  double* a1 = work + 2 * d;
  double* a2 = work + 3 * d;
  double* a3 = work + 4 * d;
  double* a4 = work + 5 * d;
  double* v2 = work + 6 * d;
  double* v3 = work + 7 * d;
  double* v4 = work + 8 * d;
  const double h2 = 0.5 * dt;

  eval(pos, vel, rest, a1);
  for (int c = 0; c < d; ++c) {
    x[c] = pos[c] + h2 * vel[c];
    v2[c] = vel[c] + h2 * a1[c];
  }
  eval(x, v2, rest, a2);
  for (int c = 0; c < d; ++c) {
    x[c] = pos[c] + h2 * v2[c];
    v3[c] = vel[c] + h2 * a2[c];
  }
  eval(x, v3, rest, a3);
  for (int c = 0; c < d; ++c) {
    x[c] = pos[c] + dt * v3[c];
    v4[c] = vel[c] + dt * a3[c];
  }
  eval(x, v4, rest, a4);
  const double h6 = dt / 6.0;
  for (int c = 0; c < d; ++c) {
    pos[c] += h6 * (vel[c] + 2.0 * v2[c] + 2.0 * v3[c] + v4[c]);
    vel[c] += h6 * (a1[c] + 2.0 * a2[c] + 2.0 * a3[c] + a4[c]);
  }
}

Eigen::VectorXd Dynamics::rest_for(const Eigen::VectorXd& commands, double dt) const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("time step must be positive");
  return apply_rest_length_commands(model_, commands);
}

NodeMatrix Dynamics::accelerations(const NodeState& state, const Eigen::VectorXd& rest) const {
  NodeMatrix acc(n_, 3);
  eval(state.positions.data(), state.velocities.data(), rest.data(), acc.data());
  return acc;
}

NodeState Dynamics::step(const NodeState& state, const Eigen::VectorXd& commands, double dt) const {
  return propagate(state, commands, dt, 1);
}

NodeState Dynamics::propagate(const NodeState& state, const Eigen::VectorXd& commands, double dt, int steps) const {
  if (state.positions.rows() != n_ || state.velocities.rows() != n_) throw ValidationError("state does not match model");
  const Eigen::VectorXd rest = rest_for(commands, dt);
  NodeState out = state;
  std::vector<double> work(10 * 3 * n_);
  for (int s = 0; s < steps; ++s) rk4(out.positions.data(), out.velocities.data(), rest.data(), dt, work.data());
  if (!out.positions.allFinite() || !out.velocities.allFinite()) {
    throw DivergenceError("integration diverged (non-finite state); reduce the time step");
  }
  return out;
}

BatchState Dynamics::step_batch(const BatchState& batch, const Eigen::VectorXd& commands, double dt) const {
  BatchState out = batch;
  propagate_batch(out, commands, dt, 1);
  return out;
}

void Dynamics::propagate_batch(BatchState& batch, const Eigen::VectorXd& commands, double dt, int steps) const {
  if (batch.positions.rows() != n_ || batch.positions.cols() % 3 != 0 ||
      batch.velocities.rows() != batch.positions.rows() || batch.velocities.cols() != batch.positions.cols()) {
    throw ValidationError("batch state does not match model");
  }
  const Eigen::VectorXd rest = rest_for(commands, dt);
  const int blocks = batch.block_count();
  const int d = 3 * n_;
  std::vector<double> pos(d), vel(d), work(10 * d);
  for (int b = 0; b < blocks; ++b) {
    for (int i = 0; i < n_; ++i) {
      for (int c = 0; c < 3; ++c) {
        pos[3 * i + c] = batch.positions(i, 3 * b + c);
        vel[3 * i + c] = batch.velocities(i, 3 * b + c);
      }
    }
    for (int s = 0; s < steps; ++s) rk4(pos.data(), vel.data(), rest.data(), dt, work.data());
    bool finite = true;
    for (int c = 0; c < d; ++c) finite = finite && std::isfinite(pos[c]) && std::isfinite(vel[c]);
    if (!finite) {
      throw DivergenceError("integration diverged in batch block " + std::to_string(b), b);
    }
    for (int i = 0; i < n_; ++i) {
      for (int c = 0; c < 3; ++c) {
        batch.positions(i, 3 * b + c) = pos[3 * i + c];
        batch.velocities(i, 3 * b + c) = vel[3 * i + c];
      }
    }
  }
}

double Dynamics::energy(const NodeState& state, const Eigen::VectorXd& rest) const {
  double e = 0.0;
  for (int i = 0; i < n_; ++i) {
    const double mass = model_.node_masses()[i];
    e += 0.5 * mass * state.velocities.row(i).squaredNorm();
    e += mass * env_.gravity * state.positions(i, 2);
    if (env_.ground_contact) {
      const double depth = env_.ground.height - state.positions(i, 2);
      if (depth > 0.0) e += 0.5 * env_.ground.stiffness * depth * depth;
    }
  }
  for (int k = 0; k < m_; ++k) {
    const double len = (state.positions.row(plus_[k]) - state.positions.row(minus_[k])).norm();
    const double stretch = len - rest(k);
    if (is_cable_[k] && stretch < 0.0) continue;
    e += 0.5 * stiffness_[k] * stretch * stretch;
  }
  return e;
}

Eigen::Vector3d Dynamics::momentum(const NodeState& state) const {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  for (int i = 0; i < n_; ++i) p += model_.node_masses()[i] * state.velocities.row(i).transpose();
  return p;
}

Eigen::VectorXd Dynamics::tensions(const NodeState& state, const Eigen::VectorXd& rest) const {
  const MemberGeometry g = member_geometry(model_, state.positions, state.velocities);
  const Eigen::VectorXd q = force_densities(model_, g.lengths, g.length_rates, rest);
  return q.cwiseProduct(g.lengths);
}

SpoolActuator::SpoolActuator(Eigen::VectorXd initial, double max_rate)
    : current_(std::move(initial)), max_rate_(max_rate) {
  if (!(max_rate_ > 0.0)) throw ValidationError("max spool rate must be positive");
}

const Eigen::VectorXd& SpoolActuator::advance(const Eigen::VectorXd& target, double dt) {
  if (target.size() != current_.size()) throw ValidationError("spool target size mismatch");
  const double limit = max_rate_ * dt;
  for (Eigen::Index a = 0; a < current_.size(); ++a) {
    current_(a) += std::clamp(target(a) - current_(a), -limit, limit);
  }
  return current_;
}

}  // namespace tensegrity
