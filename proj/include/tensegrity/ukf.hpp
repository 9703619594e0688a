#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tensegrity::ukf {

class UkfError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Covariance could not be factorized even after conditioning.
class CovarianceError : public UkfError {
 public:
  using UkfError::UkfError;
};

/// A sigma point left the valid state space during prediction.
class PredictError : public UkfError {
 public:
  PredictError(const std::string& what, int point) : UkfError(what), point_(point) {}
  int point() const { return point_; }

 private:
  int point_;
};

/// Measurement or control stream is not time-ordered.
class StreamError : public UkfError {
 public:
  using UkfError::UkfError;
};

struct UkfParams {
  double alpha = 0.0139;
  double beta = 2.0;
  double kappa = 0.0;
  double state_noise = 0.4;      // lambda_y, added to every state component per predict
  double velocity_noise = -1.0;  // overrides lambda_y on the velocity half when >= 0
  double angle_noise = 0.1;      // lambda_theta, rad^2
  double range_noise = 0.029;    // lambda_r, m^2
  double jitter = 1e-9;
};

void validate(const UkfParams& params);

struct Belief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  int dim() const { return static_cast<int>(mean.size()); }
};

struct SigmaPoints {
  Eigen::MatrixXd points;  // L x (2L + 1), column 0 is the mean
  Eigen::VectorXd mean_weights;
  Eigen::VectorXd cov_weights;
};

/// Scaled sigma points. Factorizes P + jitter I; if that fails the
/// eigenvalues are clamped to jitter and the factorization retried.
SigmaPoints sigma_points(const Belief& belief, const UkfParams& params);

/// Weighted mean and covariance (about the mean) of the columns of `points`.
Belief recombine(const Eigen::MatrixXd& points, const SigmaPoints& sp);

/// Unscented transform through `f`, without additive noise.
Belief unscented_transform(const Belief& belief, const UkfParams& params,
                           const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f);

/// Maps sigma points (columns) forward by dt in place.
class ProcessModel {
 public:
  virtual ~ProcessModel() = default;
  virtual void propagate(Eigen::MatrixXd& points, const Eigen::VectorXd& commands, double dt) const = 0;
};

/// Leaves the state unchanged.
class IdentityProcess : public ProcessModel {
 public:
  void propagate(Eigen::MatrixXd&, const Eigen::VectorXd&, double) const override {}
};

/// x <- A x + b (A and b do not depend on dt).
class LinearProcess : public ProcessModel {
 public:
  LinearProcess(Eigen::MatrixXd a, Eigen::VectorXd b) : a_(std::move(a)), b_(std::move(b)) {}
  void propagate(Eigen::MatrixXd& points, const Eigen::VectorXd&, double) const override;

 private:
  Eigen::MatrixXd a_;
  Eigen::VectorXd b_;
};

/// Additive state noise R for one predict: lambda_y on every component, or
/// lambda_y on positions and velocity_noise on the second half.
Eigen::MatrixXd process_noise(int dim, const UkfParams& params);

/// Propagates sigma points through the process and adds R.
Belief predict(const Belief& belief, const ProcessModel& process, const Eigen::VectorXd& commands, double dt,
               const UkfParams& params);

struct AngleObservation {
  int bar = 0;
  int component = 0;  // 0 pitch, 1 heading
  double value = 0.0;  // rad
};

struct RangeObservation {
  int a = 0;  // module ids
  int b = 1;
  double value = 0.0;  // m, offset-corrected
};

/// One aggregated measurement message: b angles and a ranges (either may be 0).
struct MeasurementBundle {
  double time = 0.0;
  std::vector<AngleObservation> angles;
  std::vector<RangeObservation> ranges;

  int size() const { return static_cast<int>(angles.size() + ranges.size()); }
  bool empty() const { return angles.empty() && ranges.empty(); }
  /// Stacked [angles; ranges].
  Eigen::VectorXd values() const;
};

/// Predicted measurement h(x) in bundle order: angles then ranges.
class MeasurementModel {
 public:
  virtual ~MeasurementModel() = default;
  virtual Eigen::VectorXd observe(const Eigen::VectorXd& state, const MeasurementBundle& bundle) const = 0;
};

/// h(x) = H x restricted to the bundle size; ignores ids (test hook).
class LinearMeasurement : public MeasurementModel {
 public:
  explicit LinearMeasurement(Eigen::MatrixXd h) : h_(std::move(h)) {}
  Eigen::VectorXd observe(const Eigen::VectorXd& state, const MeasurementBundle& bundle) const override;

 private:
  Eigen::MatrixXd h_;
};

/// Q = diag(lambda_theta I_b, lambda_r I_a) for the bundle.
Eigen::MatrixXd measurement_noise(const MeasurementBundle& bundle, const UkfParams& params);

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

struct UpdateResult {
  Belief posterior;
  Eigen::VectorXd innovation;
  bool skipped = false;  // innovation covariance was singular
  std::string warning;
};

/// Standard UKF measurement update. Angle residuals are wrapped. An empty
/// bundle returns the prior unchanged.
UpdateResult update(const Belief& prior, const MeasurementBundle& bundle, const MeasurementModel& model,
                    const UkfParams& params);

struct ControlSample {
  double time = 0.0;
  Eigen::VectorXd commands;
};

struct FilterStep {
  double time = 0.0;
  Eigen::VectorXd mean;
  double cov_trace = 0.0;
  Eigen::VectorXd cov_diagonal;
  double innovation_norm = 0.0;
  int measurement_count = 0;
  bool update_skipped = false;
};

struct FilterRun {
  std::vector<FilterStep> steps;
  Belief final_belief;
  std::vector<std::string> warnings;
};

struct FilterSchedule {
  double start = 0.0;
  double end = 0.0;
  double dt = 0.1;  // predict period
};

/// Predicts at a fixed rate and applies every bundle with time in
/// (t_k, t_k + dt] after the predict ending at t_k + dt. Commands are held
/// from the latest control sample at or before t_k.
FilterRun run_filter(const std::vector<MeasurementBundle>& measurements, const std::vector<ControlSample>& controls,
                     const Belief& initial, const FilterSchedule& schedule, const ProcessModel& process,
                     const MeasurementModel& model, const UkfParams& params);

}  // namespace tensegrity::ukf
