#include "tensegrity/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace tensegrity::optim {

std::string to_string(LbfgsStatus status) {
  switch (status) {
    case LbfgsStatus::GradientConverged: return "gradient_converged";
    case LbfgsStatus::FunctionConverged: return "function_converged";
    case LbfgsStatus::MaxIterations: return "max_iterations";
    case LbfgsStatus::LineSearchFailed: return "line_search_failed";
  }
  return "unknown";
}

namespace {

struct Point {
  double alpha = 0.0;
  double f = 0.0;
  double slope = 0.0;  // directional derivative
};

// Minimizer of the cubic through (a, fa, da) and (b, fb, db), falling back to
// bisection when the interpolant is unusable.
double cubic_min(const Point& a, const Point& b) {
  const double d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
  const double disc = d1 * d1 - a.slope * b.slope;
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b.alpha - a.alpha);
    const double t =
        b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    const double lo = std::min(a.alpha, b.alpha);
    const double hi = std::max(a.alpha, b.alpha);
    const double margin = 0.1 * (hi - lo);
    if (std::isfinite(t) && t > lo + margin && t < hi - margin) return t;
  }
  return 0.5 * (a.alpha + b.alpha);
}

class LineSearch {
 public:
  LineSearch(const Objective& f, const Eigen::VectorXd& x, const Eigen::VectorXd& dir, const LbfgsOptions& o,
             int& evals)
      : f_(f), x_(x), dir_(dir), o_(o), evals_(evals), grad_(x.size()) {}

  // Strong-Wolfe search (bracket then zoom). Returns false on failure.
  bool run(double f0, double slope0, double alpha0) {
    const Point start{0.0, f0, slope0};
    Point prev = start;
    double alpha = alpha0;
    for (int it = 0; it < o_.max_line_search; ++it) {
      const Point cur = eval(alpha);
      if (!std::isfinite(cur.f) || cur.f > f0 + o_.c1 * alpha * slope0 || (it > 0 && cur.f >= prev.f)) {
        return zoom(start, prev, cur);
      }
      if (std::abs(cur.slope) <= -o_.c2 * slope0) return accept(cur);
      if (cur.slope >= 0.0) return zoom(start, cur, prev);
      prev = cur;
      alpha *= 2.0;
    }
    return false;
  }

  double alpha() const { return best_.alpha; }
  double value() const { return best_.f; }
  const Eigen::VectorXd& x() const { return best_x_; }
  const Eigen::VectorXd& gradient() const { return best_g_; }

 private:
  Point eval(double alpha) {
    trial_ = x_ + alpha * dir_;
    const double fv = f_(trial_, grad_);
    ++evals_;
    Point p{alpha, fv, grad_.dot(dir_)};
    if (std::isfinite(fv) && fv < best_.f) {
      best_ = p;
      best_x_ = trial_;
      best_g_ = grad_;
    }
    return p;
  }

  bool accept(const Point& p) {
    if (best_.alpha != p.alpha) {
      best_ = p;
      best_x_ = trial_;
      best_g_ = grad_;
    }
    return true;
  }

  bool zoom(const Point& start, Point lo, Point hi) {
    for (int it = 0; it < o_.max_line_search; ++it) {
      double alpha = std::isfinite(hi.f) ? cubic_min(lo, hi) : 0.5 * (lo.alpha + hi.alpha);
      if (std::abs(hi.alpha - lo.alpha) < 1e-16 * std::max(1.0, lo.alpha)) break;
      const Point cur = eval(alpha);
      if (!std::isfinite(cur.f) || cur.f > start.f + o_.c1 * alpha * start.slope || cur.f >= lo.f) {
        hi = cur;
      } else {
        if (std::abs(cur.slope) <= -o_.c2 * start.slope) return accept(cur);
        if (cur.slope * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = cur;
      }
    }
    // Settle for any sufficient decrease found along the way.
    return best_.alpha > 0.0 && best_.f <= start.f + o_.c1 * best_.alpha * start.slope;
  }

  const Objective& f_;
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& dir_;
  const LbfgsOptions& o_;
  int& evals_;
  Eigen::VectorXd trial_;
  Eigen::VectorXd grad_;
  Point best_{0.0, std::numeric_limits<double>::infinity(), 0.0};
  Eigen::VectorXd best_x_;
  Eigen::VectorXd best_g_;
};

}  // namespace

LbfgsResult minimize_lbfgs(const Objective& f, const Eigen::VectorXd& x0, const LbfgsOptions& o) {
  LbfgsResult r;
  r.x = x0;
  r.gradient.resize(x0.size());
  r.value = f(r.x, r.gradient);
  r.evaluations = 1;
  r.history.push_back(r.value);
  if (!std::isfinite(r.value)) {
    r.status = LbfgsStatus::LineSearchFailed;
    return r;
  }

  std::deque<Eigen::VectorXd> s_hist;
  std::deque<Eigen::VectorXd> y_hist;
  std::deque<double> rho_hist;
  std::vector<double> coef(static_cast<std::size_t>(std::max(o.memory, 1)));

  for (r.iterations = 0; r.iterations < o.max_iterations; ++r.iterations) {
    if (r.gradient.lpNorm<Eigen::Infinity>() <= o.gradient_tolerance) {
      r.status = LbfgsStatus::GradientConverged;
      return r;
    }

    // Two-loop recursion.
    Eigen::VectorXd dir = -r.gradient;
    const int m = static_cast<int>(s_hist.size());
    for (int k = m - 1; k >= 0; --k) {
      coef[k] = rho_hist[k] * s_hist[k].dot(dir);
      dir -= coef[k] * y_hist[k];
    }
    if (m > 0) dir *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (int k = 0; k < m; ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(dir);
      dir += (coef[k] - beta) * s_hist[k];
    }

    double slope = r.gradient.dot(dir);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -r.gradient;
      slope = -r.gradient.squaredNorm();
    }
    const double alpha0 = m == 0 ? std::min(1.0, 1.0 / r.gradient.norm()) : 1.0;

    LineSearch ls(f, r.x, dir, o, r.evaluations);
    if (!ls.run(r.value, slope, alpha0)) {
      r.status = LbfgsStatus::LineSearchFailed;
      return r;
    }

    Eigen::VectorXd s = ls.x() - r.x;
    Eigen::VectorXd y = ls.gradient() - r.gradient;
    const double prev = r.value;
    r.x = ls.x();
    r.gradient = ls.gradient();
    r.value = ls.value();
    r.history.push_back(r.value);

    const double sy = s.dot(y);
    if (sy > 1e-12 * y.squaredNorm()) {
      if (static_cast<int>(s_hist.size()) == o.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
    }

    if (prev - r.value <= o.function_tolerance * std::max({std::abs(prev), std::abs(r.value), 1.0})) {
      ++r.iterations;
      r.status = r.gradient.lpNorm<Eigen::Infinity>() <= o.gradient_tolerance ? LbfgsStatus::GradientConverged
                                                                              : LbfgsStatus::FunctionConverged;
      return r;
    }
  }
  r.status = LbfgsStatus::MaxIterations;
  return r;
}

}  // namespace tensegrity::optim
