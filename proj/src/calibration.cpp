#include "tensegrity/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "tensegrity/geometry.hpp"

namespace tensegrity::calibration {

namespace {

constexpr double kMinDistance = 1e-12;
using ranging::Rng;

Eigen::Vector3d row3(const PositionMatrix& m, int i) { return m.row(i).transpose(); }

}  // namespace

void validate(const CalibrationDataset& data) {
  if (data.anchor_count <= 0 || data.module_count <= 0) {
    throw CalibrationError("dataset needs at least one anchor and one moving module");
  }
  if (data.samples.empty()) throw CalibrationError("dataset has no samples");
  for (std::size_t t = 0; t < data.samples.size(); ++t) {
    for (const auto& r : data.samples[t].anchor_ranges) {
      if (r.anchor < 0 || r.anchor >= data.anchor_count || r.module < 0 || r.module >= data.module_count) {
        throw CalibrationError("sample " + std::to_string(t) + " has an invalid anchor/module index");
      }
    }
    for (const auto& r : data.samples[t].internal_ranges) {
      if (r.a < 0 || r.a >= data.module_count || r.b < 0 || r.b >= data.module_count || r.a == r.b) {
        throw CalibrationError("sample " + std::to_string(t) + " has an invalid module pair");
      }
    }
  }
  for (const auto& [a, b] : data.bars) {
    if (a < 0 || a >= data.module_count || b < 0 || b >= data.module_count || a == b) {
      throw CalibrationError("invalid bar module pair");
    }
  }
  if (!data.bars.empty() && !(data.bar_length > 0.0)) throw CalibrationError("bar length must be positive");
}

std::vector<std::vector<char>> activity(const CalibrationDataset& data) {
  std::vector<std::vector<char>> alpha(data.samples.size(), std::vector<char>(data.module_count, 0));
  for (std::size_t t = 0; t < data.samples.size(); ++t) {
    std::vector<int> count(data.module_count, 0);
    for (const auto& r : data.samples[t].anchor_ranges) ++count[r.module];
    for (int j = 0; j < data.module_count; ++j) alpha[t][j] = count[j] >= data.min_anchor_measurements;
  }
  return alpha;
}

int CalibrationParams::size() const {
  const int na = static_cast<int>(anchors.rows());
  const int nm = static_cast<int>(offsets.cols());
  return 3 * na + 3 * nm * static_cast<int>(floats.size()) + na * nm;
}

Eigen::VectorXd CalibrationParams::pack() const {
  const int na = static_cast<int>(anchors.rows());
  const int nm = static_cast<int>(offsets.cols());
  Eigen::VectorXd x(size());
  int k = 0;
  for (int a = 0; a < na; ++a)
    for (int c = 0; c < 3; ++c) x(k++) = anchors(a, c);
  for (const auto& f : floats)
    for (int j = 0; j < nm; ++j)
      for (int c = 0; c < 3; ++c) x(k++) = f(j, c);
  for (int a = 0; a < na; ++a)
    for (int j = 0; j < nm; ++j) x(k++) = offsets(a, j);
  return x;
}

CalibrationParams CalibrationParams::unpack(const Eigen::VectorXd& x, int na, int nm, int samples) {
  CalibrationParams p;
  if (x.size() != 3 * na + 3 * nm * samples + na * nm) throw CalibrationError("parameter vector size mismatch");
  p.anchors.resize(na, 3);
  p.floats.assign(samples, PositionMatrix(nm, 3));
  p.offsets.resize(na, nm);
  int k = 0;
  for (int a = 0; a < na; ++a)
    for (int c = 0; c < 3; ++c) p.anchors(a, c) = x(k++);
  for (auto& f : p.floats)
    for (int j = 0; j < nm; ++j)
      for (int c = 0; c < 3; ++c) f(j, c) = x(k++);
  for (int a = 0; a < na; ++a)
    for (int j = 0; j < nm; ++j) p.offsets(a, j) = x(k++);
  return p;
}

double residual(const Eigen::Vector3d& anchor, const Eigen::Vector3d& float_pos, double offset, double raw) {
  const double e = (anchor - float_pos).norm() - offset - raw;
  return e * e;
}

namespace {

void check_dims(const CalibrationParams& p, const CalibrationDataset& data) {
  if (p.anchors.rows() != data.anchor_count || p.offsets.rows() != data.anchor_count ||
      p.offsets.cols() != data.module_count || p.floats.size() != data.samples.size()) {
    throw CalibrationError("parameters are not dimensioned to the dataset");
  }
  for (const auto& f : p.floats) {
    if (f.rows() != data.module_count) throw CalibrationError("parameters are not dimensioned to the dataset");
  }
}

// Loss and, when `grad` is non-null, its gradient on raw packed storage.
double evaluate(const Eigen::VectorXd& x, const CalibrationDataset& data,
                const std::vector<std::vector<char>>& alpha, Eigen::VectorXd* grad) {
  const int na = data.anchor_count;
  const int nm = data.module_count;
  const int float_base = 3 * na;
  const int offset_base = float_base + 3 * nm * static_cast<int>(data.samples.size());
  if (grad) grad->setZero(x.size());
  double loss = 0.0;
  for (std::size_t t = 0; t < data.samples.size(); ++t) {
    const int fb = float_base + 3 * nm * static_cast<int>(t);
    for (const auto& r : data.samples[t].anchor_ranges) {
      if (!alpha[t][r.module]) continue;
      const int ia = 3 * r.anchor;
      const int jf = fb + 3 * r.module;
      const int io = offset_base + r.anchor * nm + r.module;
      const Eigen::Vector3d diff = x.segment<3>(ia) - x.segment<3>(jf);
      const double d = diff.norm();
      const double e = d - x(io) - r.raw;
      loss += e * e;
      if (grad) {
        if (d < kMinDistance) throw SingularGradientError("anchor and float coincide in sample " + std::to_string(t));
        const Eigen::Vector3d g = (2.0 * e / d) * diff;
        grad->segment<3>(ia) += g;
        grad->segment<3>(jf) -= g;
        (*grad)(io) -= 2.0 * e;
      }
    }
    for (const auto& [a, b] : data.bars) {
      const int ia = fb + 3 * a;
      const int ib = fb + 3 * b;
      const Eigen::Vector3d diff = x.segment<3>(ia) - x.segment<3>(ib);
      const double d = diff.norm();
      const double e = d - data.bar_length;
      loss += data.bar_weight * e * e;
      if (grad) {
        if (d < kMinDistance) throw SingularGradientError("bar sensors coincide in sample " + std::to_string(t));
        const Eigen::Vector3d g = (2.0 * data.bar_weight * e / d) * diff;
        grad->segment<3>(ia) += g;
        grad->segment<3>(ib) -= g;
      }
    }
  }
  return loss;
}

}  // namespace

double total_loss(const CalibrationParams& params, const CalibrationDataset& data) {
  validate(data);
  check_dims(params, data);
  return evaluate(params.pack(), data, activity(data), nullptr);
}

Eigen::VectorXd loss_gradient(const CalibrationParams& params, const CalibrationDataset& data) {
  validate(data);
  check_dims(params, data);
  Eigen::VectorXd g;
  evaluate(params.pack(), data, activity(data), &g);
  return g;
}

namespace {

struct Plane {
  Eigen::Vector3d origin;
  Eigen::Vector3d normal;  // unit, non-negative z
  Eigen::Vector3d ex, ey;
};

Plane prior_plane(const std::vector<Eigen::Vector3d>& p) {
  Plane pl;
  pl.origin = p[0];
  pl.ex = (p[1] - p[0]).normalized();
  Eigen::Vector3d v = p[2] - p[0];
  pl.ey = (v - v.dot(pl.ex) * pl.ex).normalized();
  pl.normal = pl.ex.cross(pl.ey);
  if (pl.normal.z() < 0.0 || (pl.normal.z() == 0.0 && pl.normal.x() + pl.normal.y() < 0.0)) {
    pl.normal = -pl.normal;
    pl.ey = -pl.ey;
  }
  return pl;
}

// Sphere intersection of three ranges; the solution on side `side` of the
// plane through the three centres.
Eigen::Vector3d trilaterate(const std::vector<Eigen::Vector3d>& c, const Eigen::Vector3d& r, const Plane& pl,
                            int side) {
  const double d = (c[1] - c[0]).dot(pl.ex);
  const double i = (c[2] - c[0]).dot(pl.ex);
  const double j = (c[2] - c[0]).dot(pl.ey);
  const double x = (r(0) * r(0) - r(1) * r(1) + d * d) / (2.0 * d);
  const double y = (r(0) * r(0) - r(2) * r(2) + i * i + j * j - 2.0 * i * x) / (2.0 * j);
  const double z = std::sqrt(std::max(0.0, r(0) * r(0) - x * x - y * y));
  return pl.origin + x * pl.ex + y * pl.ey + side * z * pl.normal;
}

double min_over_max_singular(const std::vector<Eigen::Vector3d>& pts) {
  if (pts.size() < 3) return 0.0;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::MatrixXd a(pts.size(), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) a.row(static_cast<Eigen::Index>(i)) = (pts[i] - mean).transpose();
  const Eigen::Vector3d s = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues();
  return s(0) > 0.0 ? s(2) / s(0) : 0.0;
}

Eigen::Vector3d reflect(const Eigen::Vector3d& p, const Plane& pl) {
  return p - 2.0 * (p - pl.origin).dot(pl.normal) * pl.normal;
}

class Initializer {
 public:
  Initializer(const CalibrationDataset& data, const Priors& priors, const std::vector<std::vector<char>>& alpha,
              const CalibrationOptions& opt)
      : data_(data), priors_(priors), alpha_(alpha), opt_(opt) {
    const int na = data.anchor_count;
    const int nm = data.module_count;
    p_.anchors = PositionMatrix::Zero(na, 3);
    p_.offsets = Eigen::MatrixXd::Zero(na, nm);
    p_.floats.assign(data.samples.size(), PositionMatrix::Zero(nm, 3));
    known_.assign(na, 0);
    for (const auto& [a, pos] : priors.anchors) {
      p_.anchors.row(a) = pos.transpose();
      known_[a] = 1;
    }
  }

  CalibrationParams run() {
    if (priors_.anchors.size() >= 3) {
      init_floats_from_priors();
      init_anchors();
    } else {
      random_init();
    }
    double previous = range_loss();
    for (int round = 0; round < opt_.alternations; ++round) {
      refine_floats();
      refine_anchors();
      update_offsets();
      const double now = range_loss();
      if (!(previous - now > opt_.alternation_tolerance * previous)) break;
      previous = now;
    }
    return p_;
  }

 private:
  double corrected(const AnchorRange& r) const { return r.raw + p_.offsets(r.anchor, r.module); }

  double range_loss() const {
    double sum = 0.0;
    for (std::size_t t = 0; t < data_.samples.size(); ++t) {
      for (const auto& r : data_.samples[t].anchor_ranges) {
        if (!alpha_[t][r.module]) continue;
        const double e = (row3(p_.anchors, r.anchor) - row3(p_.floats[t], r.module)).norm() - corrected(r);
        sum += e * e;
      }
    }
    return sum;
  }

  void init_floats_from_priors() {
    std::vector<int> ids;
    std::vector<Eigen::Vector3d> centres;
    for (const auto& [a, pos] : priors_.anchors) {
      if (ids.size() == 3) break;
      ids.push_back(a);
      centres.push_back(pos);
    }
    const Plane pl = prior_plane(centres);
    // Both sides are consistent up to reflection; pick one and let the final
    // reference-anchor check resolve it.
    const int side = -1;
    for (std::size_t t = 0; t < data_.samples.size(); ++t) {
      std::vector<Eigen::Vector3d> ranges(data_.module_count, Eigen::Vector3d::Constant(-1.0));
      for (const auto& r : data_.samples[t].anchor_ranges) {
        for (int k = 0; k < 3; ++k)
          if (r.anchor == ids[k]) ranges[r.module](k) = r.raw;
      }
      Eigen::Vector3d sum = Eigen::Vector3d::Zero();
      int have = 0;
      std::vector<char> ok(data_.module_count, 0);
      for (int j = 0; j < data_.module_count; ++j) {
        if ((ranges[j].array() < 0.0).any()) continue;
        p_.floats[t].row(j) = trilaterate(centres, ranges[j], pl, side).transpose();
        sum += row3(p_.floats[t], j);
        ok[j] = 1;
        ++have;
      }
      const Eigen::Vector3d fallback = have ? Eigen::Vector3d(sum / have) : pl.origin - pl.normal;
      for (int j = 0; j < data_.module_count; ++j) {
        if (!ok[j]) p_.floats[t].row(j) = fallback.transpose();
      }
    }
  }

  void init_anchors() {
    Rng rng(opt_.seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (int a = 0; a < data_.anchor_count; ++a) {
      if (known_[a]) continue;
      std::vector<Eigen::Vector3d> f;
      std::vector<double> m;
      collect_for_anchor(a, f, m);
      auto est = geometry::multilaterate(f, m);
      if (est) {
        p_.anchors.row(a) = est->transpose();
      } else {
        const Eigen::Vector3d c = p_.anchors.topRows(1).transpose();
        p_.anchors.row(a) = (c + Eigen::Vector3d(n01(rng), n01(rng), n01(rng))).transpose();
      }
    }
  }

  void random_init() {
    Rng rng(opt_.seed);
    double scale = 1.0;
    std::vector<double> raws;
    for (const auto& s : data_.samples)
      for (const auto& r : s.anchor_ranges) raws.push_back(r.raw);
    if (!raws.empty()) {
      std::nth_element(raws.begin(), raws.begin() + static_cast<long>(raws.size() / 2), raws.end());
      scale = std::max(raws[raws.size() / 2], 0.1);
    }
    std::uniform_real_distribution<double> u(-scale, scale);
    for (int a = 0; a < data_.anchor_count; ++a) {
      if (!known_[a]) p_.anchors.row(a) = Eigen::RowVector3d(u(rng), u(rng), u(rng));
    }
    std::normal_distribution<double> small(0.0, 0.1 * scale);
    for (auto& f : p_.floats)
      for (int j = 0; j < data_.module_count; ++j) f.row(j) = Eigen::RowVector3d(small(rng), small(rng), small(rng));
  }

  void collect_for_anchor(int a, std::vector<Eigen::Vector3d>& f, std::vector<double>& m) const {
    for (std::size_t t = 0; t < data_.samples.size(); ++t) {
      for (const auto& r : data_.samples[t].anchor_ranges) {
        if (r.anchor != a || !alpha_[t][r.module]) continue;
        f.push_back(row3(p_.floats[t], r.module));
        m.push_back(corrected(r));
      }
    }
  }

  void refine_floats() {
    for (std::size_t t = 0; t < data_.samples.size(); ++t) {
      std::vector<std::vector<Eigen::Vector3d>> c(data_.module_count);
      std::vector<std::vector<double>> m(data_.module_count);
      for (const auto& r : data_.samples[t].anchor_ranges) {
        c[r.module].push_back(row3(p_.anchors, r.anchor));
        m[r.module].push_back(corrected(r));
      }
      for (int j = 0; j < data_.module_count; ++j) {
        if (c[j].size() >= 4) p_.floats[t].row(j) = geometry::refine_position(row3(p_.floats[t], j), c[j], m[j]).transpose();
      }
    }
  }

  void refine_anchors() {
    for (int a = 0; a < data_.anchor_count; ++a) {
      if (known_[a]) continue;
      std::vector<Eigen::Vector3d> f;
      std::vector<double> m;
      collect_for_anchor(a, f, m);
      p_.anchors.row(a) = geometry::refine_position(row3(p_.anchors, a), f, m).transpose();
    }
  }

  void update_offsets() {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(data_.anchor_count, data_.module_count);
    Eigen::MatrixXi count = Eigen::MatrixXi::Zero(data_.anchor_count, data_.module_count);
    for (std::size_t t = 0; t < data_.samples.size(); ++t) {
      for (const auto& r : data_.samples[t].anchor_ranges) {
        if (!alpha_[t][r.module]) continue;
        sum(r.anchor, r.module) += (row3(p_.anchors, r.anchor) - row3(p_.floats[t], r.module)).norm() - r.raw;
        ++count(r.anchor, r.module);
      }
    }
    for (int a = 0; a < data_.anchor_count; ++a)
      for (int j = 0; j < data_.module_count; ++j)
        p_.offsets(a, j) = count(a, j) ? sum(a, j) / count(a, j) : 0.0;
  }

  const CalibrationDataset& data_;
  const Priors& priors_;
  const std::vector<std::vector<char>>& alpha_;
  const CalibrationOptions& opt_;
  CalibrationParams p_;
  std::vector<char> known_;
};

}  // namespace

CalibrationResult calibrate(const CalibrationDataset& data, const Priors& priors, const CalibrationOptions& options) {
  validate(data);
  for (const auto& [a, pos] : priors.anchors) {
    if (a < 0 || a >= data.anchor_count) throw CalibrationError("prior for unknown anchor " + std::to_string(a));
    if (!pos.allFinite()) throw CalibrationError("prior position must be finite");
  }
  const auto alpha = activity(data);

  CalibrationResult result;
  result.gauge_ambiguous = priors.anchors.size() < 3;
  if (result.gauge_ambiguous) {
    result.warnings.emplace_back("fewer than 3 anchor priors: solution is only defined up to a rigid motion");
  }

  CalibrationParams init = Initializer(data, priors, alpha, options).run();
  const int na = data.anchor_count;
  const int nm = data.module_count;
  const int ns = static_cast<int>(data.samples.size());

  std::vector<int> fixed;
  for (const auto& [a, pos] : priors.anchors)
    for (int c = 0; c < 3; ++c) fixed.push_back(3 * a + c);

  int failures = 0;
  const optim::Objective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    try {
      const double f = evaluate(x, data, alpha, &g);
      for (int k : fixed) g(k) = 0.0;
      return f;
    } catch (const SingularGradientError&) {
      ++failures;
      return std::numeric_limits<double>::infinity();
    }
  };
  const optim::LbfgsResult opt = optim::minimize_lbfgs(objective, init.pack(), options.optimizer);

  result.params = CalibrationParams::unpack(opt.x, na, nm, ns);
  result.loss = opt.value;
  result.iterations = opt.iterations;
  result.evaluations = opt.evaluations;
  result.converged = opt.converged();
  result.status = optim::to_string(opt.status);
  result.loss_history = opt.history;
  if (!result.converged) result.warnings.push_back("optimizer did not converge: " + result.status);

  if (priors.anchors.size() >= 3 && priors.reference_anchor) {
    const int ref = *priors.reference_anchor;
    if (ref < 0 || ref >= na) throw CalibrationError("reference anchor out of range");
    std::vector<Eigen::Vector3d> centres;
    for (const auto& [a, pos] : priors.anchors) {
      if (centres.size() < 3) centres.push_back(pos);
    }
    const Plane pl = prior_plane(centres);
    const double side = (row3(result.params.anchors, ref) - pl.origin).dot(pl.normal);
    if (side * priors.reference_side < 0.0) {
      for (int a = 0; a < na; ++a) {
        if (priors.anchors.count(a)) continue;
        result.params.anchors.row(a) = reflect(row3(result.params.anchors, a), pl).transpose();
      }
      for (auto& f : result.params.floats)
        for (int j = 0; j < nm; ++j) f.row(j) = reflect(row3(f, j), pl).transpose();
      result.reflected = true;
    }
  }

  std::vector<Eigen::Vector3d> anchor_pts;
  std::vector<Eigen::Vector3d> float_pts;
  for (int a = 0; a < na; ++a) anchor_pts.push_back(row3(result.params.anchors, a));
  for (int t = 0; t < ns; ++t)
    for (int j = 0; j < nm; ++j)
      if (alpha[t][j]) float_pts.push_back(row3(result.params.floats[t], j));
  if (min_over_max_singular(anchor_pts) < 1e-6 && min_over_max_singular(float_pts) < 1e-6) {
    result.warnings.emplace_back("anchors and floats are both coplanar: geometry is rank deficient");
  }
  return result;
}

std::map<std::pair<int, int>, double> internal_offsets(const CalibrationResult& result,
                                                       const CalibrationDataset& data,
                                                       const std::vector<std::pair<int, int>>& pairs,
                                                       int min_samples) {
  validate(data);
  check_dims(result.params, data);
  const auto alpha = activity(data);
  struct Acc {
    double sum = 0.0;
    int records = 0;
    int samples = 0;
    std::size_t last = static_cast<std::size_t>(-1);
  };
  std::map<std::pair<int, int>, Acc> acc;
  for (std::size_t t = 0; t < data.samples.size(); ++t) {
    for (const auto& r : data.samples[t].internal_ranges) {
      if (!alpha[t][r.a] || !alpha[t][r.b]) continue;
      const double d = (row3(result.params.floats[t], r.a) - row3(result.params.floats[t], r.b)).norm();
      auto& slot = acc[{std::min(r.a, r.b), std::max(r.a, r.b)}];
      slot.sum += r.raw - d;
      ++slot.records;
      if (slot.last != t) {
        slot.last = t;
        ++slot.samples;
      }
    }
  }
  std::map<std::pair<int, int>, double> out;
  for (const auto& [a, b] : pairs) {
    const std::pair<int, int> key{std::min(a, b), std::max(a, b)};
    const auto it = acc.find(key);
    const int n = it == acc.end() ? 0 : it->second.samples;
    if (n < std::max(min_samples, 1)) {
      throw MissingPairError("module pair (" + std::to_string(a) + ", " + std::to_string(b) + ") has " +
                             std::to_string(n) + " shared samples");
    }
    out[key] = it->second.sum / it->second.records;
  }
  return out;
}

std::map<std::pair<int, int>, double> internal_offsets(const CalibrationResult& result,
                                                       const CalibrationDataset& data, int min_samples) {
  std::set<std::pair<int, int>> present;
  for (const auto& s : data.samples)
    for (const auto& r : s.internal_ranges) present.insert({std::min(r.a, r.b), std::max(r.a, r.b)});
  std::map<std::pair<int, int>, double> out;
  for (const auto& p : present) {
    try {
      const auto one = internal_offsets(result, data, {p}, min_samples);
      out.insert(one.begin(), one.end());
    } catch (const MissingPairError&) {
    }
  }
  return out;
}

CalibrationDataset dataset_from_log(const std::vector<ranging::RangingMeasurement>& log,
                                    const std::vector<int>& anchor_ids, const std::vector<int>& module_ids,
                                    const DatasetOptions& options) {
  if (!(options.sample_period > 0.0)) throw CalibrationError("sample period must be positive");
  std::map<int, int> anchor_index;
  std::map<int, int> module_index;
  for (std::size_t k = 0; k < anchor_ids.size(); ++k) anchor_index[anchor_ids[k]] = static_cast<int>(k);
  for (std::size_t k = 0; k < module_ids.size(); ++k) {
    if (anchor_index.count(module_ids[k])) throw CalibrationError("id used for both an anchor and a module");
    module_index[module_ids[k]] = static_cast<int>(k);
  }

  struct Bin {
    std::map<std::pair<int, int>, std::pair<double, int>> anchor;    // (anchor, module)
    std::map<std::pair<int, int>, std::pair<double, int>> internal;  // (computing, other)
  };
  std::map<long long, Bin> bins;
  for (const auto& m : log) {
    if (!m.accepted) continue;
    const long long key = static_cast<long long>(std::floor(m.time / options.sample_period));
    const bool ia = anchor_index.count(m.i) > 0;
    const bool ja = anchor_index.count(m.j) > 0;
    const bool im = module_index.count(m.i) > 0;
    const bool jm = module_index.count(m.j) > 0;
    if (ia && jm) {
      auto& s = bins[key].anchor[{anchor_index[m.i], module_index[m.j]}];
      s.first += m.raw;
      ++s.second;
    } else if (ja && im) {
      auto& s = bins[key].anchor[{anchor_index[m.j], module_index[m.i]}];
      s.first += m.raw;
      ++s.second;
    } else if (im && jm) {
      auto& s = bins[key].internal[{module_index[m.j], module_index[m.i]}];
      s.first += m.raw;
      ++s.second;
    }
  }

  std::vector<long long> keys;
  for (const auto& [k, b] : bins) keys.push_back(k);
  if (options.max_samples > 0 && static_cast<int>(keys.size()) > options.max_samples) {
    ranging::Rng rng(options.seed);
    std::shuffle(keys.begin(), keys.end(), rng);
    keys.resize(options.max_samples);
    std::sort(keys.begin(), keys.end());
  }

  CalibrationDataset data;
  data.anchor_count = static_cast<int>(anchor_ids.size());
  data.module_count = static_cast<int>(module_ids.size());
  data.anchor_ids = anchor_ids;
  data.module_ids = module_ids;
  data.bar_length = options.bar_length;
  for (const auto& [a, b] : options.bars) {
    if (!module_index.count(a) || !module_index.count(b)) throw CalibrationError("bar refers to unknown module");
    data.bars.emplace_back(module_index[a], module_index[b]);
  }
  for (long long k : keys) {
    const Bin& bin = bins[k];
    CalibrationSample s;
    s.time = (static_cast<double>(k) + 0.5) * options.sample_period;
    for (const auto& [p, v] : bin.anchor) s.anchor_ranges.push_back({p.first, p.second, v.first / v.second});
    for (const auto& [p, v] : bin.internal) s.internal_ranges.push_back({p.first, p.second, v.first / v.second});
    data.samples.push_back(std::move(s));
  }
  return data;
}

CalibrationFile to_file(const CalibrationResult& result, const CalibrationDataset& data,
                        const std::map<std::pair<int, int>, double>& internal) {
  CalibrationFile f;
  for (int a = 0; a < data.anchor_count; ++a) f.anchors[data.anchor_ids.at(a)] = row3(result.params.anchors, a);
  for (int a = 0; a < data.anchor_count; ++a)
    for (int j = 0; j < data.module_count; ++j)
      f.offsets.set(data.anchor_ids.at(a), data.module_ids.at(j), -result.params.offsets(a, j));
  for (const auto& [p, o] : internal) f.offsets.set(data.module_ids.at(p.first), data.module_ids.at(p.second), o);
  f.loss = result.loss;
  f.converged = result.converged;
  f.gauge_ambiguous = result.gauge_ambiguous;
  f.iterations = result.iterations;
  f.status = result.status;
  f.warnings = result.warnings;
  return f;
}

void write_calibration_file(const std::string& path, const CalibrationFile& file) {
  nlohmann::json j;
  j["anchors"] = nlohmann::json::array();
  for (const auto& [id, p] : file.anchors) j["anchors"].push_back({{"id", id}, {"position", {p.x(), p.y(), p.z()}}});
  j["offsets"] = nlohmann::json::array();
  for (const auto& [k, o] : file.offsets.entries()) j["offsets"].push_back({{"i", k.first}, {"j", k.second}, {"offset", o}});
  j["diagnostics"] = {{"loss", file.loss},
                      {"converged", file.converged},
                      {"gauge_ambiguous", file.gauge_ambiguous},
                      {"iterations", file.iterations},
                      {"status", file.status},
                      {"warnings", file.warnings}};
  std::ofstream out(path);
  if (!out) throw CalibrationError("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw CalibrationError("failed writing " + path);
}

CalibrationFile read_calibration_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CalibrationError("cannot open " + path);
  CalibrationFile f;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& a : j.at("anchors")) {
      const auto p = a.at("position");
      f.anchors[a.at("id").get<int>()] = Eigen::Vector3d(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
    }
    for (const auto& o : j.at("offsets")) f.offsets.set(o.at("i").get<int>(), o.at("j").get<int>(), o.at("offset").get<double>());
    if (j.contains("diagnostics")) {
      const auto& d = j["diagnostics"];
      f.loss = d.value("loss", 0.0);
      f.converged = d.value("converged", false);
      f.gauge_ambiguous = d.value("gauge_ambiguous", false);
      f.iterations = d.value("iterations", 0);
      f.status = d.value("status", std::string());
      f.warnings = d.value("warnings", std::vector<std::string>{});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CalibrationError(path + ": " + e.what());
  }
  return f;
}

Priors read_priors_file(const std::string& path, const CalibrationDataset& data) {
  std::ifstream in(path);
  if (!in) throw CalibrationError("cannot open " + path);
  auto local = [&](int id) {
    const auto it = std::find(data.anchor_ids.begin(), data.anchor_ids.end(), id);
    if (it == data.anchor_ids.end()) throw CalibrationError(path + ": unknown anchor id " + std::to_string(id));
    return static_cast<int>(it - data.anchor_ids.begin());
  };
  Priors p;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& a : j.at("anchors")) {
      const auto pos = a.at("position");
      p.anchors[local(a.at("id").get<int>())] =
          Eigen::Vector3d(pos.at(0).get<double>(), pos.at(1).get<double>(), pos.at(2).get<double>());
    }
    if (j.contains("reference_anchor")) p.reference_anchor = local(j["reference_anchor"].get<int>());
    p.reference_side = j.value("reference_side", 1);
  } catch (const nlohmann::json::exception& e) {
    throw CalibrationError(path + ": " + e.what());
  }
  return p;
}

}  // namespace tensegrity::calibration
