#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tensegrity/lbfgs.hpp"
#include "tensegrity/ranging.hpp"

namespace tensegrity::calibration {

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two points coincide where a distance gradient is required.
class SingularGradientError : public CalibrationError {
 public:
  using CalibrationError::CalibrationError;
};

/// Requested module pair has too few co-visible samples.
class MissingPairError : public CalibrationError {
 public:
  using CalibrationError::CalibrationError;
};

using PositionMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct AnchorRange {
  int anchor = 0;  // local anchor index
  int module = 0;  // local moving-module index
  double raw = 0.0;
};

struct InternalRange {
  int a = 0;  // local moving-module indices
  int b = 1;
  double raw = 0.0;
};

struct CalibrationSample {
  double time = 0.0;
  std::vector<AnchorRange> anchor_ranges;
  std::vector<InternalRange> internal_ranges;
};

/// Raw distances between fixed anchors and moving modules, sampled while the
/// robot moves. Indices are local: anchors 0..anchor_count-1 and moving
/// modules 0..module_count-1. `anchor_ids` / `module_ids` map them back to
/// network ids.
struct CalibrationDataset {
  int anchor_count = 0;
  int module_count = 0;
  std::vector<int> anchor_ids;
  std::vector<int> module_ids;
  std::vector<CalibrationSample> samples;
  /// Module pairs mounted on the same bar.
  std::vector<std::pair<int, int>> bars;
  double bar_length = 0.0;  // sensor-to-sensor distance along a bar
  double bar_weight = 1.0;
  /// A module's anchor terms count in a sample only with at least this many
  /// accepted anchor measurements.
  int min_anchor_measurements = 4;
};

void validate(const CalibrationDataset& data);

/// alpha(t, j): whether module j's anchor terms are active in sample t.
std::vector<std::vector<char>> activity(const CalibrationDataset& data);

struct CalibrationParams {
  PositionMatrix anchors;              // anchor_count x 3
  std::vector<PositionMatrix> floats;  // per sample, module_count x 3
  /// anchor_count x module_count; a correction: distance = raw + offset.
  /// Offset tables store the opposite sign (raw = distance + bias).
  Eigen::MatrixXd offsets;

  int size() const;
  Eigen::VectorXd pack() const;
  static CalibrationParams unpack(const Eigen::VectorXd& x, int anchors, int modules, int samples);
};

/// Squared ranging residual (|anchor - float| - offset - raw)^2.
double residual(const Eigen::Vector3d& anchor, const Eigen::Vector3d& float_pos, double offset, double raw);

double total_loss(const CalibrationParams& params, const CalibrationDataset& data);

/// Analytic gradient of total_loss in pack() order. Throws
/// SingularGradientError when an active distance is zero.
Eigen::VectorXd loss_gradient(const CalibrationParams& params, const CalibrationDataset& data);

struct Priors {
  /// Known anchor positions, by local anchor index.
  std::map<int, Eigen::Vector3d> anchors;
  /// Anchor whose side of the prior plane removes the reflection ambiguity,
  /// and that side: +1 when it lies on the side the plane normal with
  /// non-negative z points to, -1 for the other side.
  std::optional<int> reference_anchor;
  int reference_side = 1;
};

struct CalibrationOptions {
  optim::LbfgsOptions optimizer{20000, 20, 1e-7, 1e-15, 40, 1e-4, 0.9};
  /// Block-coordinate rounds (floats, anchors, offsets) before the joint
  /// solve; they stop early once the range loss improves by less than
  /// `alternation_tolerance` relative.
  int alternations = 200;
  double alternation_tolerance = 1e-6;
  std::uint64_t seed = 1;
};

struct CalibrationResult {
  CalibrationParams params;
  double loss = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string status;
  std::vector<double> loss_history;
  bool gauge_ambiguous = false;
  bool reflected = false;
  std::vector<std::string> warnings;
};

CalibrationResult calibrate(const CalibrationDataset& data, const Priors& priors,
                            const CalibrationOptions& options = {});

/// Internal offsets between moving modules: mean over shared samples and both
/// directions of (raw - |float_a - float_b|). Only samples where both modules
/// are active are used. Throws MissingPairError for a requested pair with
/// fewer than `min_samples` samples.
std::map<std::pair<int, int>, double> internal_offsets(const CalibrationResult& result,
                                                       const CalibrationDataset& data,
                                                       const std::vector<std::pair<int, int>>& pairs,
                                                       int min_samples = 1);

/// Same, for every module pair present in the data with enough samples.
std::map<std::pair<int, int>, double> internal_offsets(const CalibrationResult& result,
                                                       const CalibrationDataset& data, int min_samples = 1);

// --- Log conversion and calibration files -------------------------------------

struct DatasetOptions {
  double sample_period = 0.1;  // s, measurements in one bin form a sample
  int max_samples = 400;       // random subsample of bins (0 keeps all)
  std::uint64_t seed = 1;
  double bar_length = 0.0;
  std::vector<std::pair<int, int>> bars;  // network-id pairs
};

/// Groups accepted log records into samples, averaging repeated pairs in a bin.
CalibrationDataset dataset_from_log(const std::vector<ranging::RangingMeasurement>& log,
                                    const std::vector<int>& anchor_ids, const std::vector<int>& module_ids,
                                    const DatasetOptions& options);

/// Everything the estimator needs from calibration, in network ids.
struct CalibrationFile {
  std::map<int, Eigen::Vector3d> anchors;
  ranging::OffsetTable offsets;
  double loss = 0.0;
  bool converged = false;
  bool gauge_ambiguous = false;
  int iterations = 0;
  std::string status;
  std::vector<std::string> warnings;
};

CalibrationFile to_file(const CalibrationResult& result, const CalibrationDataset& data,
                        const std::map<std::pair<int, int>, double>& internal);

void write_calibration_file(const std::string& path, const CalibrationFile& file);
CalibrationFile read_calibration_file(const std::string& path);

/// Priors file: {"anchors": [{"id": n, "position": [x, y, z]}, ...],
/// "reference_anchor": id, "reference_side": +-1}. Ids are network ids.
Priors read_priors_file(const std::string& path, const CalibrationDataset& data);

}  // namespace tensegrity::calibration
