#pragma once

// Generate-then-recover calibration data: a six-strut robot held in random
// poses inside the default anchor rectangle.

#include <Eigen/Geometry>

#include <random>
#include <vector>

#include "tensegrity/calibration.hpp"
#include "tensegrity/ranging.hpp"
#include "tensegrity/scenario_config.hpp"
#include "tensegrity/structure.hpp"

namespace tensegrity::testing {

struct SyntheticCalibration {
  calibration::CalibrationDataset data;
  calibration::Priors priors;
  calibration::CalibrationParams truth;  // offsets in solver sign: raw = distance - offset
};

struct SyntheticOptions {
  int samples = 400;
  double noise = 0.0;  // std of every raw, m
  double offset_min = 0.0;
  double offset_max = 0.5;
  double internal_offset = 0.0;  // true offset of every module pair
  bool internal_ranges = false;
  double mount_offset = 0.1;
  std::uint64_t seed = 7;
};

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  q.normalize();
  return q.toRotationMatrix();
}

inline SyntheticCalibration make_synthetic_calibration(const SyntheticOptions& o) {
  const Superball ball = build_superball();
  const auto& model = ball.model;
  const int modules = model.node_count();
  harness::AnchorConfig ac;
  const auto anchors = harness::anchor_positions(ac);
  const int na = static_cast<int>(anchors.size());

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  SyntheticCalibration s;
  auto& d = s.data;
  d.anchor_count = na;
  d.module_count = modules;
  for (int a = 0; a < na; ++a) d.anchor_ids.push_back(modules + a);
  for (int j = 0; j < modules; ++j) d.module_ids.push_back(j);
  for (int b : model.bar_indices()) d.bars.emplace_back(model.plus_node(b), model.minus_node(b));
  d.bar_length = ball.model.member(model.bar_indices()[0]).rest_length - 2.0 * o.mount_offset;

  s.truth.anchors.resize(na, 3);
  for (int a = 0; a < na; ++a) s.truth.anchors.row(a) = anchors[a].transpose();
  s.truth.offsets.resize(na, modules);
  for (int a = 0; a < na; ++a) {
    for (int j = 0; j < modules; ++j) s.truth.offsets(a, j) = -(o.offset_min + (o.offset_max - o.offset_min) * u01(rng));
  }

  const Eigen::RowVector3d centre = ball.nominal_nodes.colwise().mean();
  const double margin = 1.5;
  for (int t = 0; t < o.samples; ++t) {
    const Eigen::Matrix3d r = random_rotation(rng);
    const Eigen::RowVector3d at((u01(rng) - 0.5) * (ac.width - 2 * margin), (u01(rng) - 0.5) * (ac.depth - 2 * margin),
                                0.8 + 0.7 * u01(rng));
    NodeMatrix nodes(modules, 3);
    for (int i = 0; i < modules; ++i) nodes.row(i) = (ball.nominal_nodes.row(i) - centre) * r.transpose() + at;

    calibration::PositionMatrix f(modules, 3);
    for (int j = 0; j < modules; ++j) f.row(j) = ranging::sensor_position(model, nodes, j, o.mount_offset).transpose();
    s.truth.floats.push_back(f);

    calibration::CalibrationSample sample;
    sample.time = t;
    for (int a = 0; a < na; ++a) {
      for (int j = 0; j < modules; ++j) {
        const double dist = (anchors[a] - f.row(j).transpose()).norm();
        sample.anchor_ranges.push_back({a, j, dist - s.truth.offsets(a, j) + o.noise * noise(rng)});
      }
    }
    if (o.internal_ranges) {
      for (int a = 0; a < modules; ++a) {
        for (int b = a + 1; b < modules; ++b) {
          const double dist = (f.row(a) - f.row(b)).norm();
          sample.internal_ranges.push_back({a, b, dist + o.internal_offset + o.noise * noise(rng)});
          sample.internal_ranges.push_back({b, a, dist + o.internal_offset + o.noise * noise(rng)});
        }
      }
    }
    d.samples.push_back(std::move(sample));
  }

  for (int k : ac.priors) s.priors.anchors[k] = anchors[k];
  s.priors.reference_anchor = ac.reference_anchor;
  s.priors.reference_side = ac.reference_side;
  return s;
}

inline double rms_rows(const calibration::PositionMatrix& a, const calibration::PositionMatrix& b) {
  return std::sqrt((a - b).rowwise().squaredNorm().mean());
}

inline double rms_entries(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return std::sqrt((a - b).array().square().mean());
}

}  // namespace tensegrity::testing
