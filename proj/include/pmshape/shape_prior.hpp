#pragma once

#include "pmshape/numeric.hpp"
#include "pmshape/types.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace pmshape {

/// Level-set training shapes grouped by class, one kernel bandwidth per class.
///
/// Shapes of class s are stored as the columns of a dim x m_s matrix so a
/// kernel center is a contiguous block of memory. Immutable once built apart
/// from the bandwidths, which calibration fills in.
class TrainingSet {
 public:
  struct ClassData {
    int label = 0;    // external class label (e.g. the MNIST digit)
    Matrix centers;   // dim x m_s
    double sigma = 0; // kernel bandwidth, > 0 once calibrated
  };

  TrainingSet() = default;
  TrainingSet(int width, int height) : width_(width), height_(height) {
    if (width < 1 || height < 1) throw DimensionError("TrainingSet: empty shape dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  Eigen::Index dim() const { return Eigen::Index(width_) * height_; }
  int num_classes() const { return int(classes_.size()); }
  std::size_t size(int s) const { return std::size_t(cls(s).centers.cols()); }
  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& c : classes_) n += std::size_t(c.centers.cols());
    return n;
  }
  double sigma(int s) const { return cls(s).sigma; }
  int label(int s) const { return cls(s).label; }
  const Matrix& centers(int s) const { return cls(s).centers; }
  auto center(int s, std::size_t i) const { return cls(s).centers.col(Eigen::Index(i)); }

  void set_sigma(int s, double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
      throw CalibrationError("TrainingSet: bandwidth must be positive and finite");
    classes_[std::size_t(check(s))].sigma = sigma;
  }

  /// Appends a class; returns its index. Every shape must match the set's dimensions.
  int add_class(int label, const std::vector<LevelSet>& shapes, double sigma = 0.0) {
    if (shapes.empty()) throw ConfigError("TrainingSet: class " + std::to_string(label) + " has no shapes");
    Matrix centers(dim(), Eigen::Index(shapes.size()));
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      require_same_shape(shapes[i], *this, "TrainingSet::add_class");
      if (!shapes[i].data.allFinite()) throw DimensionError("TrainingSet: non-finite level set");
      centers.col(Eigen::Index(i)) = shapes[i].data;
    }
    return add_class(label, std::move(centers), sigma);
  }

  int add_class(int label, Matrix centers, double sigma = 0.0) {
    if (centers.rows() != dim()) throw DimensionError("TrainingSet::add_class: wrong shape dimension");
    if (centers.cols() < 1) throw ConfigError("TrainingSet: class " + std::to_string(label) + " has no shapes");
    classes_.push_back({label, std::move(centers), sigma});
    return num_classes() - 1;
  }

  int index_of_label(int label) const {
    for (int s = 0; s < num_classes(); ++s)
      if (classes_[std::size_t(s)].label == label) return s;
    return -1;
  }

 private:
  int check(int s) const {
    if (s < 0 || s >= num_classes())
      throw std::out_of_range("TrainingSet: class index " + std::to_string(s) + " out of range");
    return s;
  }
  const ClassData& cls(int s) const { return classes_[std::size_t(check(s))]; }

  int width_ = 0;
  int height_ = 0;
  std::vector<ClassData> classes_;
};

/// Value of the subsampled estimator, kept in log domain.
struct LogDensityEstimate {
  double log_value = 0.0;
  std::size_t subsample_size = 0;
};

inline void require_positive_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw CalibrationError("kernel bandwidth must be positive (was the training set calibrated?)");
}

/// log N(x; center, sigma^2 I).
template <class A, class B>
double log_gaussian_kernel(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& center, double sigma) {
  require_positive_sigma(sigma);
  if (x.size() != center.size()) throw DimensionError("log_gaussian_kernel: dimension mismatch");
  const double d = double(x.size());
  const double var = sigma * sigma;
  return -0.5 * d * (kLog2Pi + std::log(var)) - (x - center).squaredNorm() / (2.0 * var);
}

namespace detail {

// log kernel values for the listed center indices of class s, in list order.
template <class X, class Indices>
void log_kernel_terms(const Eigen::MatrixBase<X>& x, int s, const TrainingSet& train,
                      const Indices& indices, std::vector<double>& out) {
  const double sigma = train.sigma(s);
  require_positive_sigma(sigma);
  if (x.size() != train.dim()) throw DimensionError("shape prior: level set dimension mismatch");
  const double var = sigma * sigma;
  const double norm = -0.5 * double(x.size()) * (kLog2Pi + std::log(var));
  const Matrix& c = train.centers(s);
  out.clear();
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(norm - (c.col(Eigen::Index(i)) - x).squaredNorm() / (2.0 * var));
}

struct IotaRange {
  std::size_t n;
  struct iterator {
    std::size_t i;
    std::size_t operator*() const { return i; }
    iterator& operator++() { ++i; return *this; }
    bool operator!=(const iterator& o) const { return i != o.i; }
  };
  iterator begin() const { return {0}; }
  iterator end() const { return {n}; }
  std::size_t size() const { return n; }
};

}  // namespace detail

/// log p(x|s) for the equal-weight kernel mixture over all m_s training shapes.
template <class X>
double log_prior_full(const Eigen::MatrixBase<X>& x, int s, const TrainingSet& train) {
  thread_local std::vector<double> terms;
  const std::size_t m = train.size(s);
  detail::log_kernel_terms(x, s, train, detail::IotaRange{m}, terms);
  return log_sum_exp(terms) - std::log(double(m));
}

inline double log_prior_full(const LevelSet& x, int s, const TrainingSet& train) {
  return log_prior_full(x.data, s, train);
}

/// Draws `k` distinct indices from [0, n) uniformly without replacement via a
/// partial Fisher-Yates shuffle over a virtual identity permutation. Only the
/// displaced entries are stored, so the cost is O(k) draws plus O(k^2) table
/// lookups, independent of n. The result is sorted.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> moved;  // position -> value
  moved.reserve(2 * k);
  auto value_at = [&](std::size_t pos) {
    for (const auto& [p, v] : moved)
      if (p == pos) return v;
    return pos;
  };
  auto store = [&](std::size_t pos, std::size_t val) {
    for (auto& [p, v] : moved)
      if (p == pos) { v = val; return; }
    moved.emplace_back(pos, val);
  };
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(rng, n - i);
    const std::size_t vi = value_at(i), vj = value_at(j);
    store(j, vi);
    out.push_back(vj);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// log of the mean kernel value over the listed training indices of class s.
template <class X>
double log_prior_on_subset(const Eigen::MatrixBase<X>& x, int s, const TrainingSet& train,
                           const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ConfigError("log_prior_on_subset: empty subset");
  for (auto i : indices)
    if (i >= train.size(s)) throw std::out_of_range("log_prior_on_subset: training index out of range");
  thread_local std::vector<double> terms;
  detail::log_kernel_terms(x, s, train, indices, terms);
  return log_sum_exp(terms) - std::log(double(indices.size()));
}

/// Unbiased subsampled estimate of p(x|s): mean of m_hat kernels whose centers
/// are drawn without replacement. With m_hat = m_s it equals log_prior_full
/// bit for bit.
template <class X>
LogDensityEstimate log_prior_subsampled(const Eigen::MatrixBase<X>& x, int s, const TrainingSet& train,
                                        std::size_t m_hat, Rng& rng) {
  const std::size_t m = train.size(s);
  if (m_hat == 0) throw ConfigError("subsample size m_hat must be at least 1");
  if (m_hat > m)
    throw ConfigError("subsample size m_hat=" + std::to_string(m_hat) + " exceeds class size " +
                      std::to_string(m));
  return {log_prior_on_subset(x, s, train, sample_without_replacement(m, m_hat, rng)), m_hat};
}

inline LogDensityEstimate log_prior_subsampled(const LevelSet& x, int s, const TrainingSet& train,
                                               std::size_t m_hat, Rng& rng) {
  return log_prior_subsampled(x.data, s, train, m_hat, rng);
}

// ---------------------------------------------------------------------------
// Bandwidth calibration: maximum-likelihood leave-one-out.

namespace detail {

// Pairwise squared distances between the columns of `c` via the Gram matrix.
inline Matrix pairwise_squared_distances(const Matrix& c) {
  const Eigen::Index m = c.cols();
  const Matrix gram = c.transpose() * c;
  const Vector sq = gram.diagonal();
  Matrix d2(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      // Clamp cancellation noise relative to the operand magnitudes.
      double v = sq[i] + sq[j] - 2.0 * gram(i, j);
      if (v < 1e-12 * (sq[i] + sq[j])) v = 0.0;
      d2(i, j) = i == j ? 0.0 : v;
    }
  }
  return d2;
}

// Sum over i of log[(1/(m-1)) sum_{j != i} N(x_i; x_j, sigma^2 I)].
inline double loo_log_likelihood(const Matrix& d2, double dim, double log_sigma) {
  const Eigen::Index m = d2.rows();
  const double var = std::exp(2.0 * log_sigma);
  const double norm = -0.5 * dim * (kLog2Pi + 2.0 * log_sigma) - std::log(double(m - 1));
  std::vector<double> terms(std::size_t(m - 1));
  std::vector<double> per_point(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    std::size_t k = 0;
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != i) terms[k++] = -d2(j, i) / (2.0 * var);
    per_point[std::size_t(i)] = norm + log_sum_exp(terms);
  }
  return pairwise_sum(per_point);
}

// Golden-section maximization of f on [lo, hi] until the bracket is narrower than tol.
template <class F>
double golden_section_max(F&& f, double lo, double hi, double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc >= fd) {
      b = d; d = c; fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

inline double calibrate_on(const std::vector<Matrix>& d2s, double dim) {
  std::vector<double> dists;
  for (const auto& d2 : d2s)
    for (Eigen::Index j = 0; j < d2.cols(); ++j)
      for (Eigen::Index i = j + 1; i < d2.rows(); ++i) dists.push_back(std::sqrt(d2(i, j)));
  double scale = median(dists) / std::sqrt(dim);
  if (!(scale > 0.0)) {
    // More than half the pairs coincide; fall back to the mean distance.
    double sum = 0.0;
    for (double v : dists) sum += v;
    scale = dists.empty() ? 0.0 : sum / double(dists.size()) / std::sqrt(dim);
  }
  if (!(scale > 0.0))
    throw CalibrationError("bandwidth calibration: all training shapes are identical; supply sigma manually");
  auto objective = [&](double log_sigma) {
    double total = 0.0;
    for (const auto& d2 : d2s) total += loo_log_likelihood(d2, dim, log_sigma);
    return total;
  };
  const double lo = std::log(1e-3 * scale), hi = std::log(10.0 * scale);
  // A log-space bracket of width 1e-4 is a relative tolerance of 1e-4 in sigma.
  return std::exp(golden_section_max(objective, lo, hi, 1e-4));
}

}  // namespace detail

/// ML leave-one-out bandwidth for one class (shapes as columns).
inline double calibrate_bandwidth(const Matrix& class_levelsets) {
  if (class_levelsets.cols() < 2)
    throw CalibrationError("bandwidth calibration needs at least 2 shapes per class; supply sigma manually");
  return detail::calibrate_on({detail::pairwise_squared_distances(class_levelsets)},
                              double(class_levelsets.rows()));
}

inline double calibrate_bandwidth(const std::vector<LevelSet>& class_levelsets) {
  if (class_levelsets.size() < 2)
    throw CalibrationError("bandwidth calibration needs at least 2 shapes per class; supply sigma manually");
  Matrix c(Eigen::Index(class_levelsets.front().size()), Eigen::Index(class_levelsets.size()));
  for (std::size_t i = 0; i < class_levelsets.size(); ++i) {
    require_same_shape(class_levelsets[i], class_levelsets.front(), "calibrate_bandwidth");
    c.col(Eigen::Index(i)) = class_levelsets[i].data;
  }
  return calibrate_bandwidth(c);
}

enum class BandwidthMode { per_class, global };

/// Calibrates every class. `global` picks one sigma maximizing the summed
/// per-class leave-one-out objectives and assigns it to all classes.
inline void calibrate_training_set(TrainingSet& train, BandwidthMode mode = BandwidthMode::per_class) {
  for (int s = 0; s < train.num_classes(); ++s)
    if (train.size(s) < 2)
      throw CalibrationError("bandwidth calibration needs at least 2 shapes in class " +
                             std::to_string(train.label(s)) + "; supply sigma manually");
  if (mode == BandwidthMode::per_class) {
    for (int s = 0; s < train.num_classes(); ++s) train.set_sigma(s, calibrate_bandwidth(train.centers(s)));
    return;
  }
  std::vector<Matrix> d2s;
  for (int s = 0; s < train.num_classes(); ++s) d2s.push_back(detail::pairwise_squared_distances(train.centers(s)));
  const double sigma = detail::calibrate_on(d2s, double(train.dim()));
  for (int s = 0; s < train.num_classes(); ++s) train.set_sigma(s, sigma);
}

}  // namespace pmshape
