#pragma once

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace tensegrity::geometry {

/// Linear least-squares position from ranges to known centres (|p - c_k| = r_k),
/// differenced against the mean equation. Needs 4 centres that are not
/// coplanar; returns nullopt otherwise.
std::optional<Eigen::Vector3d> multilaterate(const std::vector<Eigen::Vector3d>& centres,
                                             const std::vector<double>& ranges);

/// Gauss-Newton refinement of sum (|p - c_k| - r_k)^2 starting at p.
Eigen::Vector3d refine_position(Eigen::Vector3d p, const std::vector<Eigen::Vector3d>& centres,
                                const std::vector<double>& ranges, int iterations = 8);

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d operator()(const Eigen::Vector3d& p) const { return rotation * p + translation; }
};

/// Proper rotation + translation minimizing sum |R src_k + t - dst_k|^2.
RigidTransform kabsch(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& dst);

}  // namespace tensegrity::geometry
