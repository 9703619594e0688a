#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <vector>

#include "tensegrity/dynamics.hpp"
#include "tensegrity/ukf.hpp"

namespace tensegrity::estimation {

/// Sigma points through the spring-mass dynamics, one batch per predict.
class DynamicsProcess : public ukf::ProcessModel {
 public:
  DynamicsProcess(const Dynamics& dynamics, double sim_dt);
  void propagate(Eigen::MatrixXd& points, const Eigen::VectorXd& commands, double dt) const override;

 private:
  const Dynamics& dynamics_;
  double sim_dt_;
};

enum class AngleMode { Pitch, PitchHeading };

/// Gimbal limit above which the heading of a bar is not reported.
inline constexpr double kGimbalPitch = 85.0 * M_PI / 180.0;

struct BarAngles {
  double pitch = 0.0;    // asin(u_z), rad
  double heading = 0.0;  // atan2(u_y, u_x), rad
};

/// Axis angles of bar `bar` (index into bar_indices()); u points from the
/// lower-index node to the higher-index node.
BarAngles bar_angles(const TensegrityModel& model, const NodeMatrix& nodes, int bar);

/// IMU observations for one bar from a measured pitch/heading pair. The
/// heading is dropped in Pitch mode and whenever |pitch| exceeds the gimbal limit.
std::vector<ukf::AngleObservation> angle_observations(int bar, const BarAngles& measured, AngleMode mode);

/// h(x) for bar angles and offset-corrected ranges. Module ids below the node
/// count are end caps (ranging at sensor_position); other ids are anchors.
class TensegrityMeasurement : public ukf::MeasurementModel {
 public:
  TensegrityMeasurement(const TensegrityModel& model, std::map<int, Eigen::Vector3d> anchors, double mount_offset);
  Eigen::VectorXd observe(const Eigen::VectorXd& state, const ukf::MeasurementBundle& bundle) const override;

  const std::map<int, Eigen::Vector3d>& anchors() const { return anchors_; }

 private:
  Eigen::Vector3d module_position(const NodeMatrix& nodes, int id) const;

  const TensegrityModel& model_;
  std::map<int, Eigen::Vector3d> anchors_;
  double mount_offset_;
  std::vector<int> partner_;
};

/// Initial belief: end-cap sensors multilaterated from anchor ranges in
/// `bundle`, the nominal shape fitted to them rigidly, zero velocity and
/// covariance variance * I. Throws UkfError when fewer than three end caps
/// can be located.
ukf::Belief initial_belief(const TensegrityModel& model, const NodeMatrix& nominal,
                           const std::map<int, Eigen::Vector3d>& anchors, const ukf::MeasurementBundle& bundle,
                           double mount_offset, double variance = 1.0);

/// Node positions of a state vector.
NodeMatrix positions_of(const Eigen::VectorXd& state);

}  // namespace tensegrity::estimation
