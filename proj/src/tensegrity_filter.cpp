#include "tensegrity/tensegrity_filter.hpp"

#include <algorithm>
#include <limits>
#include <cmath>

#include "tensegrity/errors.hpp"
#include "tensegrity/geometry.hpp"
#include "tensegrity/ranging.hpp"

namespace tensegrity::estimation {

DynamicsProcess::DynamicsProcess(const Dynamics& dynamics, double sim_dt) : dynamics_(dynamics), sim_dt_(sim_dt) {
  if (!(sim_dt > 0.0)) throw ukf::UkfError("simulation step must be positive");
}

void DynamicsProcess::propagate(Eigen::MatrixXd& points, const Eigen::VectorXd& commands, double dt) const {
  const int n = dynamics_.node_count();
  const int l = static_cast<int>(points.cols());
  if (points.rows() != 6 * n) throw ukf::UkfError("state dimension does not match the model");
  const int steps = std::max(1, static_cast<int>(std::lround(dt / sim_dt_)));
  const double h = dt / steps;

  BatchState batch;
  batch.positions.resize(n, 3 * l);
  batch.velocities.resize(n, 3 * l);
  for (int b = 0; b < l; ++b)
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) {
        batch.positions(i, 3 * b + c) = points(3 * i + c, b);
        batch.velocities(i, 3 * b + c) = points(3 * n + 3 * i + c, b);
      }
  try {
    dynamics_.propagate_batch(batch, commands, h, steps);
  } catch (const DivergenceError& e) {
    throw ukf::PredictError(std::string("sigma point diverged: ") + e.what(), e.block());
  }
  for (int b = 0; b < l; ++b)
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) {
        points(3 * i + c, b) = batch.positions(i, 3 * b + c);
        points(3 * n + 3 * i + c, b) = batch.velocities(i, 3 * b + c);
      }
}

BarAngles bar_angles(const TensegrityModel& model, const NodeMatrix& nodes, int bar) {
  const auto bars = model.bar_indices();
  if (bar < 0 || bar >= static_cast<int>(bars.size())) throw GeometryError("bar index out of range");
  const int k = bars[bar];
  const Eigen::Vector3d axis = nodes.row(model.minus_node(k)) - nodes.row(model.plus_node(k));
  const double len = axis.norm();
  if (!(len > 1e-9)) throw GeometryError("bar " + std::to_string(bar) + " is degenerate");
  const Eigen::Vector3d u = axis / len;
  return {std::asin(std::clamp(u.z(), -1.0, 1.0)), std::atan2(u.y(), u.x())};
}

std::vector<ukf::AngleObservation> angle_observations(int bar, const BarAngles& measured, AngleMode mode) {
  std::vector<ukf::AngleObservation> out{{bar, 0, measured.pitch}};
  if (mode == AngleMode::PitchHeading && std::abs(measured.pitch) <= kGimbalPitch) {
    out.push_back({bar, 1, measured.heading});
  }
  return out;
}

NodeMatrix positions_of(const Eigen::VectorXd& state) {
  const int n = static_cast<int>(state.size() / 6);
  NodeMatrix p(n, 3);
  for (int i = 0; i < n; ++i) p.row(i) = state.segment<3>(3 * i).transpose();
  return p;
}

TensegrityMeasurement::TensegrityMeasurement(const TensegrityModel& model, std::map<int, Eigen::Vector3d> anchors,
                                             double mount_offset)
    : model_(model), anchors_(std::move(anchors)), mount_offset_(mount_offset) {
  for (const auto& [id, p] : anchors_) {
    if (id < model.node_count()) throw ukf::UkfError("anchor id " + std::to_string(id) + " collides with an end cap");
  }
  partner_.resize(model.node_count());
  for (int i = 0; i < model.node_count(); ++i) partner_[i] = ranging::bar_partner(model, i);
}

Eigen::Vector3d TensegrityMeasurement::module_position(const NodeMatrix& nodes, int id) const {
  if (id >= 0 && id < model_.node_count()) {
    const Eigen::Vector3d p = nodes.row(id).transpose();
    const Eigen::Vector3d axis = nodes.row(partner_[id]).transpose() - p;
    const double len = axis.norm();
    if (!(len > 1e-9)) throw GeometryError("bar at node " + std::to_string(id) + " is degenerate");
    return p + (mount_offset_ / len) * axis;
  }
  const auto it = anchors_.find(id);
  if (it == anchors_.end()) throw ukf::UkfError("unknown module id " + std::to_string(id));
  return it->second;
}

Eigen::VectorXd TensegrityMeasurement::observe(const Eigen::VectorXd& state, const ukf::MeasurementBundle& bundle) const {
  const NodeMatrix nodes = positions_of(state);
  Eigen::VectorXd z(bundle.size());
  int k = 0;
  for (const auto& a : bundle.angles) {
    const BarAngles ang = bar_angles(model_, nodes, a.bar);
    z(k++) = a.component == 0 ? ang.pitch : ang.heading;
  }
  for (const auto& r : bundle.ranges) z(k++) = (module_position(nodes, r.a) - module_position(nodes, r.b)).norm();
  return z;
}

ukf::Belief initial_belief(const TensegrityModel& model, const NodeMatrix& nominal,
                           const std::map<int, Eigen::Vector3d>& anchors, const ukf::MeasurementBundle& bundle,
                           double mount_offset, double variance) {
  const int n = model.node_count();
  std::vector<std::vector<Eigen::Vector3d>> centres(n);
  std::vector<std::vector<double>> ranges(n);
  for (const auto& r : bundle.ranges) {
    const bool a_cap = r.a >= 0 && r.a < n;
    const bool b_cap = r.b >= 0 && r.b < n;
    if (a_cap == b_cap) continue;
    const int cap = a_cap ? r.a : r.b;
    const auto it = anchors.find(a_cap ? r.b : r.a);
    if (it == anchors.end()) continue;
    centres[cap].push_back(it->second);
    ranges[cap].push_back(r.value);
  }

  std::vector<Eigen::Vector3d> src;
  std::vector<Eigen::Vector3d> dst;
  for (int i = 0; i < n; ++i) {
    auto est = geometry::multilaterate(centres[i], ranges[i]);
    if (!est && centres[i].size() >= 3) {
      // Coplanar anchors leave a mirror ambiguity; start below them.
      Eigen::Vector3d guess = Eigen::Vector3d::Zero();
      double low = std::numeric_limits<double>::infinity();
      for (const auto& c : centres[i]) {
        guess += c;
        low = std::min(low, c.z());
      }
      guess /= static_cast<double>(centres[i].size());
      guess.z() = low - 1.0;
      est = guess;
    }
    if (!est) continue;
    dst.push_back(geometry::refine_position(*est, centres[i], ranges[i]));
    src.push_back(ranging::sensor_position(model, nominal, i, mount_offset));
  }
  if (src.size() < 3) throw ukf::UkfError("too few end caps located to initialize the filter");

  const geometry::RigidTransform fit = geometry::kabsch(src, dst);
  ukf::Belief b;
  b.mean = Eigen::VectorXd::Zero(6 * n);
  for (int i = 0; i < n; ++i) b.mean.segment<3>(3 * i) = fit(nominal.row(i).transpose());
  b.cov = variance * Eigen::MatrixXd::Identity(6 * n, 6 * n);
  return b;
}

}  // namespace tensegrity::estimation
