#include "tensegrity/geometry.hpp"

#include <stdexcept>

namespace tensegrity::geometry {

std::optional<Eigen::Vector3d> multilaterate(const std::vector<Eigen::Vector3d>& c, const std::vector<double>& r) {
  const int k = static_cast<int>(c.size());
  if (k < 4 || r.size() != c.size()) return std::nullopt;
  Eigen::Vector3d cbar = Eigen::Vector3d::Zero();
  double qbar = 0.0;
  for (int i = 0; i < k; ++i) {
    cbar += c[i];
    qbar += r[i] * r[i] - c[i].squaredNorm();
  }
  cbar /= k;
  qbar /= k;
  Eigen::MatrixXd a(k, 3);
  Eigen::VectorXd b(k);
  for (int i = 0; i < k; ++i) {
    a.row(i) = -2.0 * (c[i] - cbar).transpose();
    b(i) = (r[i] * r[i] - c[i].squaredNorm()) - qbar;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (!(s(2) > 1e-6 * s(0))) return std::nullopt;
  return Eigen::Vector3d(svd.solve(b));
}

Eigen::Vector3d refine_position(Eigen::Vector3d p, const std::vector<Eigen::Vector3d>& c,
                                const std::vector<double>& r, int iterations) {
  if (c.size() < 3) return p;
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix3d jtj = Eigen::Matrix3d::Zero();
    Eigen::Vector3d jtr = Eigen::Vector3d::Zero();
    for (std::size_t k = 0; k < c.size(); ++k) {
      const Eigen::Vector3d diff = p - c[k];
      const double d = diff.norm();
      if (d < 1e-9) continue;
      const Eigen::Vector3d u = diff / d;
      jtj += u * u.transpose();
      jtr += u * (d - r[k]);
    }
    jtj += 1e-9 * Eigen::Matrix3d::Identity();
    const Eigen::Vector3d step = jtj.ldlt().solve(jtr);
    if (!step.allFinite()) break;
    p -= step;
    if (step.norm() < 1e-12) break;
  }
  return p;
}

RigidTransform kabsch(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& dst) {
  if (src.size() != dst.size() || src.empty()) throw std::invalid_argument("kabsch needs matching non-empty sets");
  Eigen::Vector3d cs = Eigen::Vector3d::Zero();
  Eigen::Vector3d cd = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= static_cast<double>(src.size());
  cd /= static_cast<double>(dst.size());
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  RigidTransform t;
  t.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  t.translation = cd - t.rotation * cs;
  return t;
}

}  // namespace tensegrity::geometry
