#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <random>

#include "synthetic_calibration.hpp"
#include "tensegrity/calibration.hpp"

using namespace tensegrity;
using namespace tensegrity::calibration;
using tensegrity::testing::make_synthetic_calibration;
using tensegrity::testing::rms_entries;
using tensegrity::testing::rms_rows;
using tensegrity::testing::SyntheticOptions;

namespace {

SyntheticOptions small(int samples, std::uint64_t seed = 7) {
  SyntheticOptions o;
  o.samples = samples;
  o.seed = seed;
  return o;
}

Eigen::VectorXd fd_gradient(const CalibrationParams& p, const CalibrationDataset& d, double h) {
  const Eigen::VectorXd x = p.pack();
  Eigen::VectorXd g(x.size());
  const int na = d.anchor_count, nm = d.module_count, ns = static_cast<int>(d.samples.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    g(k) = (total_loss(CalibrationParams::unpack(xp, na, nm, ns), d) -
            total_loss(CalibrationParams::unpack(xm, na, nm, ns), d)) /
           (2.0 * h);
  }
  return g;
}

}  // namespace

TEST(Residual, Examples) {
  const Eigen::Vector3d anchor(0, 0, 0);
  const Eigen::Vector3d f(3, 4, 0);
  EXPECT_DOUBLE_EQ(residual(anchor, f, 0.0, 5.0), 0.0);
  EXPECT_DOUBLE_EQ(residual(anchor, f, 0.5, 4.5), 0.0);
  EXPECT_NEAR(residual(anchor, f, 0.0, 4.9), 0.01, 1e-12);
}

TEST(TotalLoss, ZeroAtTruth) {
  const auto s = make_synthetic_calibration(small(10));
  EXPECT_LT(total_loss(s.truth, s.data), 1e-20);
}

TEST(TotalLoss, PerturbedRawAddsSquare) {
  auto s = make_synthetic_calibration(small(10));
  s.data.samples[3].anchor_ranges[5].raw += 0.1;
  EXPECT_NEAR(total_loss(s.truth, s.data), 0.01, 1e-12);
}

TEST(TotalLoss, ModuleWithThreeAnchorsIsExcluded) {
  auto s = make_synthetic_calibration(small(4));
  auto& ranges = s.data.samples[1].anchor_ranges;
  std::vector<AnchorRange> kept;
  int seen = 0;
  for (const auto& r : ranges) {
    if (r.module != 2) {
      kept.push_back(r);
    } else if (seen++ < 3) {
      kept.push_back(r);
      kept.back().raw += 1.0;  // would dominate the loss if counted
    }
  }
  ranges = kept;
  EXPECT_EQ(activity(s.data)[1][2], 0);
  EXPECT_EQ(activity(s.data)[1][3], 1);
  EXPECT_LT(total_loss(s.truth, s.data), 1e-20);
}

TEST(TotalLoss, BarTermsUseZeroOffset) {
  auto s = make_synthetic_calibration(small(3));
  s.data.bar_length += 0.2;
  EXPECT_NEAR(total_loss(s.truth, s.data), 3 * 6 * 0.04 * s.data.bar_weight, 1e-12);
}

TEST(Params, PackUnpackRoundTrip) {
  const auto s = make_synthetic_calibration(small(5));
  const Eigen::VectorXd x = s.truth.pack();
  EXPECT_EQ(x.size(), s.truth.size());
  EXPECT_EQ(x.size(), 8 * 3 + 5 * 12 * 3 + 8 * 12);
  const auto back = CalibrationParams::unpack(x, 8, 12, 5);
  EXPECT_EQ(back.pack(), x);
}

TEST(LossGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 0.05);
  for (int trial = 0; trial < 3; ++trial) {
    auto s = make_synthetic_calibration(small(3, 20 + trial));
    for (auto& smp : s.data.samples)
      for (auto& r : smp.anchor_ranges) r.raw += n(rng);
    Eigen::VectorXd x = s.truth.pack();
    for (Eigen::Index k = 0; k < x.size(); ++k) x(k) += n(rng);
    const auto p = CalibrationParams::unpack(x, 8, 12, 3);
    const Eigen::VectorXd g = loss_gradient(p, s.data);
    const Eigen::VectorXd fd = fd_gradient(p, s.data, 1e-6);
    EXPECT_LT((g - fd).norm() / fd.norm(), 1e-5);
  }
}

TEST(LossGradient, OffsetCoordinateFormula) {
  auto s = make_synthetic_calibration(small(4));
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto& smp : s.data.samples)
    for (auto& r : smp.anchor_ranges) r.raw += n(rng);
  const Eigen::VectorXd g = loss_gradient(s.truth, s.data);
  const int base = 8 * 3 + 4 * 12 * 3;
  for (int a : {0, 3, 7}) {
    for (int j : {0, 5, 11}) {
      double expected = 0.0;
      for (std::size_t t = 0; t < s.data.samples.size(); ++t) {
        for (const auto& r : s.data.samples[t].anchor_ranges) {
          if (r.anchor != a || r.module != j) continue;
          const double d = (s.truth.anchors.row(a) - s.truth.floats[t].row(j)).norm();
          expected += 2.0 * (d - s.truth.offsets(a, j) - r.raw) * -1.0;
        }
      }
      EXPECT_NEAR(g(base + a * 12 + j), expected, 1e-12);
    }
  }
}

TEST(LossGradient, VanishesAtExactMinimum) {
  const auto s = make_synthetic_calibration(small(20));
  EXPECT_LT(loss_gradient(s.truth, s.data).norm(), 1e-8);
}

TEST(LossGradient, CoincidentPointsThrow) {
  auto s = make_synthetic_calibration(small(2));
  s.truth.floats[1].row(4) = s.truth.anchors.row(2);
  EXPECT_THROW(loss_gradient(s.truth, s.data), SingularGradientError);
}

// One noiseless calibration with internal ranges, shared by the recovery tests.
class NoiselessCalibration : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SyntheticOptions o;
    o.internal_ranges = true;
    o.internal_offset = 0.3;
    synthetic_ = new tensegrity::testing::SyntheticCalibration(make_synthetic_calibration(o));
    result_ = new CalibrationResult(calibrate(synthetic_->data, synthetic_->priors));
  }
  static void TearDownTestSuite() {
    delete synthetic_;
    delete result_;
  }
  static tensegrity::testing::SyntheticCalibration* synthetic_;
  static CalibrationResult* result_;
};

tensegrity::testing::SyntheticCalibration* NoiselessCalibration::synthetic_ = nullptr;
CalibrationResult* NoiselessCalibration::result_ = nullptr;

TEST_F(NoiselessCalibration, RecoversAnchorsAndOffsets) {
  EXPECT_TRUE(result_->converged) << result_->status;
  EXPECT_FALSE(result_->gauge_ambiguous);
  EXPECT_LT(rms_rows(result_->params.anchors, synthetic_->truth.anchors), 1e-3);
  EXPECT_LT(rms_entries(result_->params.offsets, synthetic_->truth.offsets), 1e-3);
}

TEST_F(NoiselessCalibration, PriorsStayFixed) {
  for (const auto& [a, pos] : synthetic_->priors.anchors)
    EXPECT_EQ((result_->params.anchors.row(a).transpose() - pos).norm(), 0.0);
}

TEST_F(NoiselessCalibration, LossHistoryDecreases) {
  const auto& h = result_->loss_history;
  ASSERT_FALSE(h.empty());
  for (std::size_t k = 1; k < h.size(); ++k) EXPECT_LE(h[k], h[k - 1] * (1 + 1e-12));
}

TEST_F(NoiselessCalibration, RecoversInternalOffset) {
  const auto internal = internal_offsets(*result_, synthetic_->data);
  EXPECT_EQ(internal.size(), 66u);
  for (const auto& [pair, o] : internal) EXPECT_NEAR(o, 0.3, 1e-3) << pair.first << "," << pair.second;
}

TEST_F(NoiselessCalibration, FileUsesBiasSign) {
  const auto file = to_file(*result_, synthetic_->data, {});
  const auto& d = synthetic_->data;
  for (int a = 0; a < d.anchor_count; ++a)
    for (int j = 0; j < d.module_count; ++j)
      EXPECT_NEAR(file.offsets.get(d.anchor_ids[a], d.module_ids[j]), -synthetic_->truth.offsets(a, j), 1e-3);
}

TEST(InternalOffsets, ZeroOffsetRecoversZero) {
  SyntheticOptions o = small(30);
  o.internal_ranges = true;
  const auto s = make_synthetic_calibration(o);
  CalibrationResult r;
  r.params = s.truth;
  for (const auto& [pair, off] : internal_offsets(r, s.data)) EXPECT_NEAR(off, 0.0, 1e-12);
}

TEST(InternalOffsets, MissingPairThrows) {
  const auto s = make_synthetic_calibration(small(5));
  CalibrationResult r;
  r.params = s.truth;
  EXPECT_THROW(internal_offsets(r, s.data, {{0, 1}}), MissingPairError);
  EXPECT_TRUE(internal_offsets(r, s.data).empty());
}

TEST(InternalOffsets, MinimumSampleCount) {
  SyntheticOptions o = small(5);
  o.internal_ranges = true;
  const auto s = make_synthetic_calibration(o);
  CalibrationResult r;
  r.params = s.truth;
  EXPECT_NO_THROW(internal_offsets(r, s.data, {{0, 1}}, 5));
  EXPECT_THROW(internal_offsets(r, s.data, {{0, 1}}, 6), MissingPairError);
}

TEST(Calibrate, NoisyRecovery) {
  SyntheticOptions o;
  o.noise = 0.03;
  o.seed = 3;
  const auto s = make_synthetic_calibration(o);
  const auto start = std::chrono::steady_clock::now();
  const auto r = calibrate(s.data, s.priors);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(rms_rows(r.params.anchors, s.truth.anchors), 0.05);
  EXPECT_LT(rms_entries(r.params.offsets, s.truth.offsets), 0.03);
  EXPECT_LT(seconds, 60.0);
}

TEST(Calibrate, NoPriorsIsGaugeAmbiguous) {
  const auto s = make_synthetic_calibration(small(20));
  CalibrationOptions opt;
  opt.alternations = 2;
  opt.optimizer.max_iterations = 20;
  const auto r = calibrate(s.data, Priors{}, opt);
  EXPECT_TRUE(r.gauge_ambiguous);
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_TRUE(std::isfinite(r.loss));
}

TEST(Calibrate, IterationLimitIsReported) {
  const auto s = make_synthetic_calibration(small(30));
  CalibrationOptions opt;
  opt.alternations = 0;
  opt.optimizer.max_iterations = 2;
  const auto r = calibrate(s.data, s.priors, opt);
  EXPECT_FALSE(r.converged);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Validate, RejectsBadIndices) {
  auto s = make_synthetic_calibration(small(2));
  s.data.samples[0].anchor_ranges[0].anchor = 8;
  EXPECT_THROW(validate(s.data), CalibrationError);
  s = make_synthetic_calibration(small(2));
  s.data.samples.clear();
  EXPECT_THROW(validate(s.data), CalibrationError);
}

TEST(DatasetFromLog, BinsAndAverages) {
  std::vector<ranging::RangingMeasurement> log;
  auto add = [&](int i, int j, double raw, double t, bool accepted = true) {
    ranging::RangingMeasurement m;
    m.i = i;
    m.j = j;
    m.raw = raw;
    m.corrected = raw;
    m.time = t;
    m.accepted = accepted;
    log.push_back(m);
  };
  add(10, 0, 2.0, 0.01);
  add(0, 10, 2.2, 0.02);  // same pair, other direction
  add(11, 1, 3.0, 0.03);
  add(11, 1, 9.0, 0.04, false);
  add(0, 1, 1.5, 0.05);
  add(10, 0, 4.0, 0.15);
  DatasetOptions o;
  o.max_samples = 0;
  const auto d = dataset_from_log(log, {10, 11}, {0, 1}, o);
  ASSERT_EQ(d.samples.size(), 2u);
  ASSERT_EQ(d.samples[0].anchor_ranges.size(), 2u);
  EXPECT_EQ(d.samples[0].anchor_ranges[0].anchor, 0);
  EXPECT_EQ(d.samples[0].anchor_ranges[0].module, 0);
  EXPECT_NEAR(d.samples[0].anchor_ranges[0].raw, 2.1, 1e-12);
  EXPECT_NEAR(d.samples[0].anchor_ranges[1].raw, 3.0, 1e-12);
  ASSERT_EQ(d.samples[0].internal_ranges.size(), 1u);
  EXPECT_EQ(d.samples[0].internal_ranges[0].a, 1);
  EXPECT_EQ(d.samples[1].anchor_ranges.size(), 1u);
}

TEST(CalibrationFile, RoundTrip) {
  CalibrationFile f;
  f.anchors[12] = Eigen::Vector3d(1.25, -3.5, 0.4);
  f.offsets.set(12, 0, 0.123456789);
  f.offsets.set(0, 1, 0.3);
  f.loss = 1.5;
  f.converged = true;
  f.iterations = 42;
  f.status = "ok";
  f.warnings = {"w"};
  const auto path = (std::filesystem::temp_directory_path() / "calibration_roundtrip.json").string();
  write_calibration_file(path, f);
  const auto g = read_calibration_file(path);
  std::remove(path.c_str());
  EXPECT_EQ(g.anchors.at(12), f.anchors.at(12));
  EXPECT_EQ(g.offsets.get(12, 0), 0.123456789);
  EXPECT_EQ(g.offsets.get(1, 0), 0.3);
  EXPECT_EQ(g.iterations, 42);
  EXPECT_EQ(g.warnings, f.warnings);
}
