#pragma once

#include "pmshape/numeric.hpp"
#include "pmshape/proposal.hpp"
#include "pmshape/sampler.hpp"
#include "pmshape/shape_prior.hpp"
#include "pmshape/types.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pmshape {

/// 2|a ∩ b| / (|a| + |b|); two empty masks score 1.
inline double dice(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "dice");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a.data[i] & b.data[i];
    na += a.data[i];
    nb += b.data[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(inter) / double(na + nb);
}

/// Per-pixel fraction of samples whose mask contains the pixel.
struct ConfidenceMap {
  int width = 0;
  int height = 0;
  Vector frequency;
  std::size_t n_samples = 0;
};

inline ConfidenceMap confidence_map(const std::vector<SampleRecord>& samples,
                                    std::optional<int> class_filter = std::nullopt) {
  ConfidenceMap map;
  std::vector<std::size_t> counts;
  for (const auto& r : samples) {
    if (class_filter && r.s != *class_filter) continue;
    if (map.n_samples == 0) {
      map.width = r.mask.width;
      map.height = r.mask.height;
      counts.assign(r.mask.size(), 0);
    } else {
      require_same_shape(r.mask, map, "confidence_map");
    }
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += r.mask.data[i];
    ++map.n_samples;
  }
  if (map.n_samples == 0)
    throw ConfigError(class_filter ? "confidence_map: no samples of class index " + std::to_string(*class_filter)
                                   : std::string("confidence_map: no samples"));
  map.frequency.resize(Eigen::Index(counts.size()));
  for (std::size_t i = 0; i < counts.size(); ++i)
    map.frequency[Eigen::Index(i)] = double(counts[i]) / double(map.n_samples);
  return map;
}

/// Pixels of {frequency >= threshold} with a 4-neighbour outside that set.
inline BinaryMask level_curve(const ConfidenceMap& map, double threshold) {
  BinaryMask region(map.width, map.height), curve(map.width, map.height);
  for (std::size_t i = 0; i < region.size(); ++i) region.data[i] = map.frequency[Eigen::Index(i)] >= threshold;
  for (int r = 0; r < map.height; ++r)
    for (int c = 0; c < map.width; ++c) {
      if (!region(r, c)) continue;
      const bool edge = (r > 0 && !region(r - 1, c)) || (r + 1 < map.height && !region(r + 1, c)) ||
                        (c > 0 && !region(r, c - 1)) || (c + 1 < map.width && !region(r, c + 1));
      curve(r, c) = edge;
    }
  return curve;
}

/// Sample count per class index; sums to samples.size().
inline std::map<int, std::size_t> class_histogram(const std::vector<SampleRecord>& samples) {
  std::map<int, std::size_t> h;
  for (const auto& r : samples) ++h[r.s];
  return h;
}

inline double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw DimensionError("total_variation: length mismatch");
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return 0.5 * tv;
}

// ---------------------------------------------------------------------------
// Timing.

struct TimingRun {
  std::size_t training_size = 0;
  PriorEstimator estimator = PriorEstimator::subsampled;
  std::vector<double> per_sample_seconds;
};

struct TimingRow {
  std::size_t training_size = 0;
  PriorEstimator estimator = PriorEstimator::subsampled;
  double mean_seconds = 0.0;
  double std_seconds = 0.0;
  std::size_t n = 0;
};

/// Mean and sample standard deviation of per-sample time for each
/// (training size, estimator) pair, ordered by estimator then size.
inline std::vector<TimingRow> timing_report(const std::vector<TimingRun>& runs) {
  std::map<std::pair<int, std::size_t>, std::vector<double>> groups;
  for (const auto& r : runs) {
    auto& g = groups[{int(r.estimator), r.training_size}];
    g.insert(g.end(), r.per_sample_seconds.begin(), r.per_sample_seconds.end());
  }
  std::vector<TimingRow> rows;
  for (const auto& [key, v] : groups) {
    TimingRow row;
    row.estimator = PriorEstimator(key.first);
    row.training_size = key.second;
    row.n = v.size();
    if (!v.empty()) {
      double sum = 0.0;
      for (double t : v) sum += t;
      row.mean_seconds = sum / double(v.size());
      double ss = 0.0;
      for (double t : v) ss += (t - row.mean_seconds) * (t - row.mean_seconds);
      row.std_seconds = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
    }
    rows.push_back(row);
  }
  return rows;
}

/// mean(size_b) / mean(size_a) for one estimator, if both rows exist.
inline std::optional<double> timing_ratio(const std::vector<TimingRow>& rows, PriorEstimator e, std::size_t size_a,
                                          std::size_t size_b) {
  const TimingRow *a = nullptr, *b = nullptr;
  for (const auto& r : rows) {
    if (r.estimator != e) continue;
    if (r.training_size == size_a) a = &r;
    if (r.training_size == size_b) b = &r;
  }
  if (!a || !b || a->mean_seconds <= 0.0) return std::nullopt;
  return b->mean_seconds / a->mean_seconds;
}

// ---------------------------------------------------------------------------
// Low-dimensional toy target for checking the sampler against quadrature.
// Shapes are 1- or 2-vectors; the prior is the same KDE used for images.

struct ToyLikelihood {
  enum class Kind { uniform, gaussian };
  Kind kind = Kind::uniform;
  Vector observation;  // gaussian only
  double tau = 1.0;    // gaussian only

  static ToyLikelihood uniform() { return {}; }
  static ToyLikelihood gaussian(Vector obs, double tau) { return {Kind::gaussian, std::move(obs), tau}; }

  double log_density(const Vector& x) const {
    if (kind == Kind::uniform) return 0.0;
    return -0.5 * double(x.size()) * (kLog2Pi + 2.0 * std::log(tau)) - (x - observation).squaredNorm() / (2.0 * tau * tau);
  }
  /// Gradient of -log_density.
  Vector neg_gradient(const Vector& x) const {
    if (kind == Kind::uniform) return Vector::Zero(x.size());
    return (x - observation) / (tau * tau);
  }
};

/// Regular grid over a 1- or 2-dimensional box; cells indexed row-major with
/// the last dimension fastest.
struct ToyGrid {
  std::vector<double> lo, hi;
  std::vector<int> bins;

  int dims() const { return int(bins.size()); }
  std::size_t cells() const {
    std::size_t n = 1;
    for (int b : bins) n *= std::size_t(b);
    return n;
  }
  double width(int d) const { return (hi[std::size_t(d)] - lo[std::size_t(d)]) / bins[std::size_t(d)]; }

  /// Cell containing x, or -1 when x lies outside the box.
  long cell_of(const Vector& x) const {
    long idx = 0;
    for (int d = 0; d < dims(); ++d) {
      const double t = (x[d] - lo[std::size_t(d)]) / width(d);
      if (!(t >= 0.0) || t >= bins[std::size_t(d)]) return -1;
      idx = idx * bins[std::size_t(d)] + long(t);
    }
    return idx;
  }
};

namespace detail {
// Gauss-Legendre nodes/weights on [-1, 1].
inline void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(std::size_t(n), 0.0);
  weights.assign(std::size_t(n), 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 1; k <= n; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    nodes[std::size_t(i)] = -z;
    nodes[std::size_t(n - 1 - i)] = z;
    weights[std::size_t(i)] = weights[std::size_t(n - 1 - i)] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
}
}  // namespace detail

/// Exact (up to quadrature) posterior masses p(s, cell | y) for a toy target.
class ToyPosteriorOracle {
 public:
  const ToyGrid& grid() const { return grid_; }
  int num_classes() const { return int(mass_.size()); }
  double mass(int s, std::size_t cell) const { return mass_[std::size_t(s)][cell]; }

  std::vector<double> x_marginal() const {
    std::vector<double> out(grid_.cells(), 0.0);
    for (const auto& m : mass_)
      for (std::size_t c = 0; c < out.size(); ++c) out[c] += m[c];
    return out;
  }
  std::vector<double> s_marginal() const {
    std::vector<double> out;
    for (const auto& m : mass_) out.push_back(pairwise_sum(m));
    return out;
  }
  /// Normalized posterior density p(s, x | y) restricted to the grid box.
  double density(int s, const Vector& x) const {
    return std::exp(log_p_s_ + log_prior_full(x, s, *train_) + lik_->log_density(x) - log_norm_);
  }
  double log_normalizer() const { return log_norm_; }

 private:
  friend ToyPosteriorOracle toy_exact_posterior(const TrainingSet&, const ToyLikelihood&, const ToyGrid&, int);
  ToyGrid grid_;
  std::vector<std::vector<double>> mass_;
  const TrainingSet* train_ = nullptr;
  const ToyLikelihood* lik_ = nullptr;
  double log_p_s_ = 0.0;
  double log_norm_ = 0.0;
};

/// Gauss-Legendre quadrature of p(s) p(x|s) p(y|x) over every grid cell,
/// normalized over the box. `train` and `lik` must outlive the oracle.
inline ToyPosteriorOracle toy_exact_posterior(const TrainingSet& train, const ToyLikelihood& lik, const ToyGrid& grid,
                                              int nodes_per_dim = 16) {
  const int dims = grid.dims();
  if (dims < 1 || dims > 2 || train.dim() != dims)
    throw DimensionError("toy_exact_posterior: only 1- or 2-dimensional shape spaces are supported");
  if (grid.lo.size() != std::size_t(dims) || grid.hi.size() != std::size_t(dims))
    throw DimensionError("toy_exact_posterior: malformed grid");
  std::vector<double> gx, gw;
  detail::gauss_legendre(nodes_per_dim, gx, gw);

  ToyPosteriorOracle o;
  o.grid_ = grid;
  o.train_ = &train;
  o.lik_ = &lik;
  o.log_p_s_ = -std::log(double(train.num_classes()));
  const std::size_t cells = grid.cells();
  o.mass_.assign(std::size_t(train.num_classes()), std::vector<double>(cells, 0.0));

  // Integrate in log space relative to a common offset so nothing underflows.
  std::vector<std::vector<double>> log_mass(o.mass_.size(), std::vector<double>(cells));
  Vector x(dims);
  std::vector<double> terms;
  for (std::size_t c = 0; c < cells; ++c) {
    std::vector<int> idx(static_cast<std::size_t>(dims));
    std::size_t rem = c;
    for (int d = dims - 1; d >= 0; --d) {
      idx[std::size_t(d)] = int(rem % std::size_t(grid.bins[std::size_t(d)]));
      rem /= std::size_t(grid.bins[std::size_t(d)]);
    }
    for (int s = 0; s < train.num_classes(); ++s) {
      terms.clear();
      const std::size_t npts = dims == 1 ? gx.size() : gx.size() * gx.size();
      for (std::size_t p = 0; p < npts; ++p) {
        double log_w = 0.0;
        for (int d = 0; d < dims; ++d) {
          const std::size_t k = d == 0 ? p % gx.size() : p / gx.size();
          const double h = grid.width(d);
          const double a = grid.lo[std::size_t(d)] + h * idx[std::size_t(d)];
          x[d] = a + 0.5 * h * (gx[k] + 1.0);
          log_w += std::log(0.5 * h * gw[k]);
        }
        terms.push_back(log_w + o.log_p_s_ + log_prior_full(x, s, train) + lik.log_density(x));
      }
      log_mass[std::size_t(s)][c] = log_sum_exp(terms);
    }
  }
  std::vector<double> all;
  for (const auto& v : log_mass) all.insert(all.end(), v.begin(), v.end());
  o.log_norm_ = log_sum_exp(all);
  for (std::size_t s = 0; s < o.mass_.size(); ++s)
    for (std::size_t c = 0; c < cells; ++c) o.mass_[s][c] = std::exp(log_mass[s][c] - o.log_norm_);
  return o;
}

/// ShapeModel over the toy space: KDE-kernel drift plus likelihood gradient,
/// perturbation from an explicit covariance factor.
class ToyModel {
 public:
  ToyModel(const TrainingSet& train, const ToyLikelihood& lik, SmoothCovariance cov, ProposalParams params)
      : train_(train), lik_(lik), cov_(std::move(cov)), params_(params) {
    if (cov_.dim() != train.dim()) throw DimensionError("ToyModel: covariance dimension mismatch");
  }

  double log_likelihood(const Vector& x) const { return lik_.log_density(x); }

  std::function<Vector(const Vector&)> gradient(std::size_t j, int s) const {
    return [this, j, s](const Vector& v) -> Vector {
      const double sigma = train_.sigma(s);
      return (v - train_.center(s, j)) / (sigma * sigma) + lik_.neg_gradient(v);
    };
  }

  Vector propose(const Vector& x, std::size_t j, int s, Rng& rng) const {
    return propose_gradient_shifted(x, gradient(j, s), cov_, params_, rng);
  }

  double log_proposal_ratio(const Vector& x, const Vector& x_prime, std::size_t j, int s) const {
    return log_proposal_ratio_gradient_shifted(x, x_prime, gradient(j, s), cov_, params_);
  }

 private:
  const TrainingSet& train_;
  const ToyLikelihood& lik_;
  SmoothCovariance cov_;
  ProposalParams params_;
};

}  // namespace pmshape
