#include "tensegrity/ukf.hpp"

#include <cmath>

namespace tensegrity::ukf {

void validate(const UkfParams& p) {
  if (!(p.alpha > 0.0 && p.alpha <= 1.0)) throw UkfError("alpha must lie in (0, 1]");
  if (!(p.kappa >= 0.0)) throw UkfError("kappa must be non-negative");
  if (!(p.state_noise > 0.0) || !(p.angle_noise > 0.0) || !(p.range_noise > 0.0)) {
    throw UkfError("noise variances must be positive");
  }
  if (!(p.jitter >= 0.0)) throw UkfError("jitter must be non-negative");
}

namespace {

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& p) { return 0.5 * (p + p.transpose()); }

Eigen::MatrixXd factor(const Eigen::MatrixXd& p, double jitter) {
  const int n = static_cast<int>(p.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(symmetrized(p) + jitter * Eigen::MatrixXd::Identity(n, n));
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrized(p));
  if (eig.info() != Eigen::Success) throw CovarianceError("covariance eigen-decomposition failed");
  const Eigen::VectorXd clamped = eig.eigenvalues().cwiseMax(std::max(jitter, 1e-12));
  const Eigen::MatrixXd fixed = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
  Eigen::LLT<Eigen::MatrixXd> retry(symmetrized(fixed));
  if (retry.info() != Eigen::Success) throw CovarianceError("covariance is not positive definite after conditioning");
  return retry.matrixL();
}

}  // namespace

SigmaPoints sigma_points(const Belief& belief, const UkfParams& params) {
  const int n = belief.dim();
  if (n == 0 || belief.cov.rows() != n || belief.cov.cols() != n) throw UkfError("belief dimensions are inconsistent");
  if (!belief.mean.allFinite() || !belief.cov.allFinite()) throw CovarianceError("belief is not finite");
  const double lambda = params.alpha * params.alpha * (n + params.kappa) - n;
  const double scale = n + lambda;
  const Eigen::MatrixXd s = factor(belief.cov, params.jitter) * std::sqrt(scale);

  SigmaPoints sp;
  sp.points.resize(n, 2 * n + 1);
  sp.points.col(0) = belief.mean;
  for (int i = 0; i < n; ++i) {
    sp.points.col(1 + i) = belief.mean + s.col(i);
    sp.points.col(1 + n + i) = belief.mean - s.col(i);
  }
  sp.mean_weights = Eigen::VectorXd::Constant(2 * n + 1, 0.5 / scale);
  sp.cov_weights = sp.mean_weights;
  sp.mean_weights(0) = lambda / scale;
  sp.cov_weights(0) = lambda / scale + (1.0 - params.alpha * params.alpha + params.beta);
  return sp;
}

Belief recombine(const Eigen::MatrixXd& points, const SigmaPoints& sp) {
  Belief b;
  b.mean = points * sp.mean_weights;
  const Eigen::MatrixXd dev = points.colwise() - b.mean;
  b.cov = symmetrized(dev * sp.cov_weights.asDiagonal() * dev.transpose());
  return b;
}

Belief unscented_transform(const Belief& belief, const UkfParams& params,
                           const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f) {
  const SigmaPoints sp = sigma_points(belief, params);
  const Eigen::VectorXd y0 = f(sp.points.col(0));
  Eigen::MatrixXd y(y0.size(), sp.points.cols());
  y.col(0) = y0;
  for (Eigen::Index i = 1; i < sp.points.cols(); ++i) y.col(i) = f(sp.points.col(i));
  return recombine(y, sp);
}

void LinearProcess::propagate(Eigen::MatrixXd& points, const Eigen::VectorXd&, double) const {
  points = (a_ * points).colwise() + b_;
}

Eigen::MatrixXd process_noise(int dim, const UkfParams& params) {
  Eigen::VectorXd d = Eigen::VectorXd::Constant(dim, params.state_noise);
  if (params.velocity_noise >= 0.0) d.tail(dim / 2).setConstant(params.velocity_noise);
  return d.asDiagonal();
}

Belief predict(const Belief& belief, const ProcessModel& process, const Eigen::VectorXd& commands, double dt,
               const UkfParams& params) {
  if (!(dt > 0.0)) throw UkfError("predict dt must be positive");
  SigmaPoints sp = sigma_points(belief, params);
  process.propagate(sp.points, commands, dt);
  for (Eigen::Index i = 0; i < sp.points.cols(); ++i) {
    if (!sp.points.col(i).allFinite()) {
      throw PredictError("sigma point " + std::to_string(i) + " diverged", static_cast<int>(i));
    }
  }
  Belief out = recombine(sp.points, sp);
  out.cov += process_noise(belief.dim(), params);
  return out;
}

Eigen::VectorXd MeasurementBundle::values() const {
  Eigen::VectorXd z(size());
  int k = 0;
  for (const auto& a : angles) z(k++) = a.value;
  for (const auto& r : ranges) z(k++) = r.value;
  return z;
}

Eigen::VectorXd LinearMeasurement::observe(const Eigen::VectorXd& state, const MeasurementBundle& bundle) const {
  if (bundle.size() > h_.rows()) throw UkfError("bundle larger than the linear measurement matrix");
  return h_.topRows(bundle.size()) * state;
}

Eigen::MatrixXd measurement_noise(const MeasurementBundle& bundle, const UkfParams& params) {
  const int b = static_cast<int>(bundle.angles.size());
  Eigen::VectorXd d(bundle.size());
  d.head(b).setConstant(params.angle_noise);
  d.tail(bundle.size() - b).setConstant(params.range_noise);
  return d.asDiagonal();
}

double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * M_PI);
  if (w <= -M_PI) w += 2.0 * M_PI;
  return w;
}

UpdateResult update(const Belief& prior, const MeasurementBundle& bundle, const MeasurementModel& model,
                    const UkfParams& params) {
  UpdateResult r;
  if (bundle.empty()) {
    r.posterior = prior;
    return r;
  }
  const int b = static_cast<int>(bundle.angles.size());
  const int m = bundle.size();
  const SigmaPoints sp = sigma_points(prior, params);
  const int np = static_cast<int>(sp.points.cols());

  Eigen::MatrixXd z(m, np);
  for (int i = 0; i < np; ++i) {
    const Eigen::VectorXd zi = model.observe(sp.points.col(i), bundle);
    if (zi.size() != m) throw UkfError("measurement model returned the wrong size");
    z.col(i) = zi;
  }
  // Angle deviations are taken relative to the central point and never
  // re-wrapped around the mean, which keeps S positive semi-definite across
  // the +-pi seam.
  Eigen::MatrixXd dz(m, np);
  Eigen::VectorXd zhat(m);
  for (int k = 0; k < m; ++k) {
    if (k < b) {
      for (int i = 0; i < np; ++i) dz(k, i) = wrap_angle(z(k, i) - z(k, 0));
      const double shift = dz.row(k).dot(sp.mean_weights);
      dz.row(k).array() -= shift;
      zhat(k) = wrap_angle(z(k, 0) + shift);
    } else {
      zhat(k) = z.row(k).dot(sp.mean_weights);
      dz.row(k) = z.row(k).array() - zhat(k);
    }
  }
  const Eigen::MatrixXd dx = sp.points.colwise() - sp.points * sp.mean_weights;

  const Eigen::MatrixXd s =
      symmetrized(dz * sp.cov_weights.asDiagonal() * dz.transpose()) + measurement_noise(bundle, params);
  const Eigen::MatrixXd pxz = dx * sp.cov_weights.asDiagonal() * dz.transpose();

  r.innovation = bundle.values() - zhat;
  for (int k = 0; k < b; ++k) r.innovation(k) = wrap_angle(r.innovation(k));

  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success || !s.allFinite()) {
    r.posterior = prior;
    r.skipped = true;
    r.warning = "innovation covariance is singular; update skipped";
    return r;
  }
  const Eigen::MatrixXd gain = llt.solve(pxz.transpose()).transpose();
  r.posterior.mean = prior.mean + gain * r.innovation;
  r.posterior.cov = symmetrized(prior.cov - gain * s * gain.transpose());
  return r;
}

FilterRun run_filter(const std::vector<MeasurementBundle>& measurements, const std::vector<ControlSample>& controls,
                     const Belief& initial, const FilterSchedule& schedule, const ProcessModel& process,
                     const MeasurementModel& model, const UkfParams& params) {
  validate(params);
  if (!(schedule.dt > 0.0) || !(schedule.end >= schedule.start)) throw UkfError("invalid filter schedule");
  for (std::size_t k = 1; k < measurements.size(); ++k) {
    if (measurements[k].time < measurements[k - 1].time) throw StreamError("measurement stream is not time-ordered");
  }
  for (std::size_t k = 1; k < controls.size(); ++k) {
    if (controls[k].time < controls[k - 1].time) throw StreamError("control stream is not time-ordered");
  }

  FilterRun run;
  Belief belief = initial;
  std::size_t next_meas = 0;
  while (next_meas < measurements.size() && measurements[next_meas].time <= schedule.start) ++next_meas;
  std::size_t control = 0;
  Eigen::VectorXd commands;

  const long steps = std::lround(std::floor((schedule.end - schedule.start) / schedule.dt + 1e-9));
  for (long k = 0; k < steps; ++k) {
    const double t0 = schedule.start + static_cast<double>(k) * schedule.dt;
    const double t1 = schedule.start + static_cast<double>(k + 1) * schedule.dt;
    while (control < controls.size() && controls[control].time <= t0 + 1e-12) commands = controls[control++].commands;

    belief = predict(belief, process, commands, schedule.dt, params);

    FilterStep step;
    step.time = t1;
    double innovation_sq = 0.0;
    while (next_meas < measurements.size() && measurements[next_meas].time <= t1 + 1e-12) {
      const MeasurementBundle& bundle = measurements[next_meas++];
      UpdateResult u = update(belief, bundle, model, params);
      if (u.skipped) {
        step.update_skipped = true;
        run.warnings.push_back("t=" + std::to_string(t1) + ": " + u.warning);
      } else if (u.innovation.size() > 0) {
        innovation_sq += u.innovation.squaredNorm();
      }
      step.measurement_count += bundle.size();
      belief = std::move(u.posterior);
    }
    step.mean = belief.mean;
    step.cov_trace = belief.cov.trace();
    step.cov_diagonal = belief.cov.diagonal();
    step.innovation_norm = std::sqrt(innovation_sq);
    run.steps.push_back(std::move(step));
  }
  run.final_belief = belief;
  return run;
}

}  // namespace tensegrity::ukf
