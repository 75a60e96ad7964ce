#pragma once

#include "pmshape/likelihood.hpp"
#include "pmshape/numeric.hpp"
#include "pmshape/shape_prior.hpp"
#include "pmshape/types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>
#include <limits>
#include <string>

namespace pmshape {

struct ProposalParams {
  double step_scale = 1.0;     // gamma, multiplies the drift
  double perturb_scale = 1.0;  // multiplies the smooth Gaussian perturbation
};

inline void validate(const ProposalParams& p) {
  if (!(p.step_scale >= 0.0) || !(p.perturb_scale >= 0.0) || !std::isfinite(p.step_scale) ||
      !std::isfinite(p.perturb_scale))
    throw ConfigError("proposal step_scale and perturb_scale must be finite and non-negative");
}

// ---------------------------------------------------------------------------
// Smoothing.

/// Separable truncated Gaussian blur of an h x w row-major image with
/// half-sample symmetric ("reflect") boundary. Radius is ceil(3 sigma);
/// sigma <= 0 is the identity.
inline Vector gaussian_blur(const Eigen::Ref<const Vector>& img, int h, int w, double sigma) {
  if (img.size() != Eigen::Index(h) * w) throw DimensionError("gaussian_blur: size mismatch");
  if (!(sigma > 0.0)) return img;
  const int radius = int(std::ceil(3.0 * sigma));
  std::vector<double> k(std::size_t(2 * radius + 1));
  double ksum = 0.0;
  for (int t = -radius; t <= radius; ++t) {
    k[std::size_t(t + radius)] = std::exp(-0.5 * double(t) * t / (sigma * sigma));
    ksum += k[std::size_t(t + radius)];
  }
  for (double& v : k) v /= ksum;

  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  Vector tmp(img.size()), out(img.size());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) acc += k[std::size_t(t + radius)] * img[Eigen::Index(r) * w + reflect(c + t, w)];
      tmp[Eigen::Index(r) * w + c] = acc;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) acc += k[std::size_t(t + radius)] * tmp[Eigen::Index(reflect(r + t, h)) * w + c];
      out[Eigen::Index(r) * w + c] = acc;
    }
  return out;
}

/// Dense matrix B with B * v == gaussian_blur(v).
inline Matrix blur_operator(int h, int w, double sigma) {
  const Eigen::Index n = Eigen::Index(h) * w;
  Matrix b(n, n);
  Vector e = Vector::Zero(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    e[k] = 1.0;
    b.col(k) = gaussian_blur(e, h, w, sigma);
    e[k] = 0.0;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Covariance.

/// Frobenius-nearest positive semi-definite matrix to symmetrize(a): negative
/// eigenvalues are clipped to zero. Inputs that are already PSD come back as
/// their symmetrized selves, untouched.
inline Matrix nearest_psd(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("nearest_psd: matrix must be square");
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) throw NumericalError("nearest_psd: eigendecomposition failed");
  const Vector& lambda = eig.eigenvalues();
  if (lambda.size() == 0 || lambda.minCoeff() >= 0.0) return sym;
  const Vector clipped = lambda.cwiseMax(0.0);
  const Matrix& v = eig.eigenvectors();
  Matrix out = v * clipped.asDiagonal() * v.transpose();
  return 0.5 * (out + out.transpose());
}

enum class CovarianceMode { dense, blur_operator };

struct CovarianceOptions {
  CovarianceMode mode = CovarianceMode::dense;
  Eigen::Index dense_cap = 4096;  // dense construction is O((MN)^3)
};

/// Fixed proposal covariance. Stored either as a dense lower Cholesky factor
/// L (Sigma = L L^T) or, for a separable blur, in the Kronecker eigenbasis
/// Sigma = (U_h x U_w) diag(d) (U_h x U_w)^T, where no MN x MN matrix exists.
class SmoothCovariance {
 public:
  SmoothCovariance() = default;

  /// Wraps an explicit lower-triangular factor (used for toy models and tests).
  static SmoothCovariance from_factor(Matrix lower, int height = 0, int width = 0, double blur_sigma = 0.0,
                                      double jitter = 0.0) {
    if (lower.rows() != lower.cols()) throw DimensionError("SmoothCovariance: factor must be square");
    if (!lower.allFinite()) throw NumericalError("SmoothCovariance: non-finite factor");
    SmoothCovariance c;
    c.factor_ = lower.triangularView<Eigen::Lower>();
    c.height_ = height > 0 ? height : int(lower.rows());
    c.width_ = width > 0 ? width : 1;
    c.blur_sigma_ = blur_sigma;
    c.jitter_ = jitter;
    return c;
  }

  /// Factors a symmetric PSD matrix after adding jitter * I.
  static SmoothCovariance from_covariance(const Matrix& sigma, double jitter, int height, int width,
                                          double blur_sigma) {
    Matrix s = sigma;
    s.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) throw NumericalError("SmoothCovariance: Cholesky factorization failed");
    return from_factor(llt.matrixL(), height, width, blur_sigma, jitter);
  }

  /// Sigma = (S_h x S_w) + jitter I for symmetric PSD S_h (h x h) and S_w (w x w).
  static SmoothCovariance from_kronecker(const Matrix& s_h, const Matrix& s_w, double jitter, double blur_sigma) {
    if (s_h.rows() != s_h.cols() || s_w.rows() != s_w.cols())
      throw DimensionError("SmoothCovariance: Kronecker factors must be square");
    Eigen::SelfAdjointEigenSolver<Matrix> eh(0.5 * (s_h + s_h.transpose()));
    Eigen::SelfAdjointEigenSolver<Matrix> ew(0.5 * (s_w + s_w.transpose()));
    if (eh.info() != Eigen::Success || ew.info() != Eigen::Success)
      throw NumericalError("SmoothCovariance: eigendecomposition failed");
    SmoothCovariance c;
    c.height_ = int(s_h.rows());
    c.width_ = int(s_w.rows());
    c.u_h_ = eh.eigenvectors();
    c.u_w_ = ew.eigenvectors();
    const Vector lh = eh.eigenvalues().cwiseMax(0.0), lw = ew.eigenvalues().cwiseMax(0.0);
    c.sqrt_d_ = ((lh * lw.transpose()).array() + jitter).sqrt().matrix();
    if (!c.sqrt_d_.allFinite() || !(c.sqrt_d_.minCoeff() > 0.0))
      throw NumericalError("SmoothCovariance: Kronecker spectrum is not positive");
    c.blur_sigma_ = blur_sigma;
    c.jitter_ = jitter;
    c.kronecker_ = true;
    return c;
  }

  Eigen::Index dim() const { return kronecker_ ? Eigen::Index(height_) * width_ : factor_.rows(); }
  int height() const { return height_; }
  int width() const { return width_; }
  double blur_sigma() const { return blur_sigma_; }
  double jitter() const { return jitter_; }
  bool is_dense() const { return !kronecker_; }

  /// Lower Cholesky factor. Only stored in dense form.
  const Matrix& factor() const {
    if (kronecker_) throw ConfigError("SmoothCovariance: no dense factor in blur-operator mode");
    return factor_;
  }

  /// Materializes Sigma (O((MN)^2) memory).
  Matrix covariance() const {
    if (!kronecker_) return factor_ * factor_.transpose();
    const Eigen::Index n = dim();
    Matrix root(n, n);
    Vector e = Vector::Zero(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      e[k] = 1.0;
      root.col(k) = apply_factor(e);
      e[k] = 0.0;
    }
    Matrix s = root * root.transpose();
    return 0.5 * (s + s.transpose());
  }

  /// R * eps for a square root R of Sigma (R = L in dense form).
  Vector apply_factor(const Vector& eps) const {
    if (!kronecker_) return factor_.triangularView<Eigen::Lower>() * eps;
    Vector out(eps.size());
    as_image(out) = u_h_ * (sqrt_d_.array() * as_image(eps).array()).matrix() * u_w_.transpose();
    return out;
  }

  /// R^{-1} r. Its squared norm is r^T Sigma^{-1} r in either form.
  Vector whiten(const Vector& r) const {
    Vector out;
    if (!kronecker_) {
      out = factor_.triangularView<Eigen::Lower>().solve(r);
    } else {
      out.resize(r.size());
      as_image(out) = ((u_h_.transpose() * as_image(r) * u_w_).array() / sqrt_d_.array()).matrix();
    }
    if (!out.allFinite()) throw NumericalError("SmoothCovariance: singular factor");
    return out;
  }

  double log_det() const {
    if (kronecker_) return 2.0 * sqrt_d_.array().log().sum();
    return 2.0 * factor_.diagonal().array().log().sum();
  }

 private:
  using ImageMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstImageMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  ImageMap as_image(Vector& v) const { return ImageMap(v.data(), height_, width_); }
  ConstImageMap as_image(const Vector& v) const {
    if (v.size() != dim()) throw DimensionError("SmoothCovariance: vector length mismatch");
    return ConstImageMap(v.data(), height_, width_);
  }

  Matrix factor_;
  Matrix u_h_, u_w_, sqrt_d_;  // Kronecker form
  bool kronecker_ = false;
  int height_ = 0;
  int width_ = 0;
  double blur_sigma_ = 0.0;
  double jitter_ = 0.0;
};

/// Builds the smooth-perturbation covariance for an h x w image.
///
/// Dense mode: Z has i.i.d. unit Gaussian entries, row k of F is the blurred
/// row k of Z (viewed as an image), A = Z^{-1} F, Sigma_hat = sym(A A^T),
/// Sigma = nearest_psd(Sigma_hat) + jitter I with jitter = 1e-6 tr(Sigma)/MN.
/// Z is redrawn up to three times if its reciprocal condition estimate is
/// below 1e-12.
///
/// Blur-operator mode skips Z entirely: Sigma = B B^T + jitter I with the
/// separable B = B_h x B_w, kept in Kronecker form. No dimension cap.
inline SmoothCovariance build_smooth_covariance(int h, int w, double blur_sigma, Rng& rng,
                                                const CovarianceOptions& opts = {}) {
  if (h < 1 || w < 1) throw DimensionError("build_smooth_covariance: empty image");
  if (blur_sigma < 0.0 || !std::isfinite(blur_sigma)) throw ConfigError("blur_sigma must be non-negative");
  const Eigen::Index n = Eigen::Index(h) * w;

  if (opts.mode == CovarianceMode::blur_operator) {
    const Matrix bh = blur_operator(1, h, blur_sigma), bw = blur_operator(1, w, blur_sigma);
    const Matrix sh = bh * bh.transpose(), sw = bw * bw.transpose();
    const double jitter = 1e-6 * sh.trace() * sw.trace() / double(n);
    return SmoothCovariance::from_kronecker(sh, sw, jitter, blur_sigma);
  }

  if (n > opts.dense_cap)
    throw ConfigError("dense covariance for " + std::to_string(h) + "x" + std::to_string(w) + " (" +
                      std::to_string(n) + " pixels) exceeds the cap of " + std::to_string(opts.dense_cap) +
                      "; use cov_mode=blur_operator");

  constexpr int kAttempts = 4;  // first draw plus three redraws
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    Matrix z(n, n);
    for (Eigen::Index j = 0; j < n; ++j) fill_standard_normal(rng, z.col(j));
    Eigen::PartialPivLU<Matrix> lu(z);
    if (!(lu.rcond() >= 1e-12)) continue;

    Matrix f(n, n);
    for (Eigen::Index k = 0; k < n; ++k) f.row(k) = gaussian_blur(z.row(k).transpose(), h, w, blur_sigma).transpose();
    const Matrix a = lu.solve(f);
    Matrix sigma_hat = a * a.transpose();
    sigma_hat = 0.5 * (sigma_hat + sigma_hat.transpose());
    const Matrix sigma = nearest_psd(sigma_hat);
    const double jitter = 1e-6 * sigma.trace() / double(n);
    return SmoothCovariance::from_covariance(sigma, jitter, h, w, blur_sigma);
  }
  throw NumericalError("build_smooth_covariance: Z numerically singular after 3 redraws");
}

// ---------------------------------------------------------------------------
// Gradient-shifted Gaussian proposal, q(x'|x) = N(x'; x - gamma * grad(x), ps^2 Sigma).
// `grad` is any callable Vector(const Vector&).

template <class Grad>
Vector proposal_mean(const Vector& x, Grad&& grad, double step_scale) {
  if (step_scale == 0.0) return x;
  return x - step_scale * grad(x);
}

template <class Grad>
Vector propose_gradient_shifted(const Vector& x, Grad&& grad, const SmoothCovariance& cov,
                                const ProposalParams& params, Rng& rng) {
  if (cov.dim() != x.size()) throw DimensionError("proposal: covariance dimension mismatch");
  Vector out = proposal_mean(x, grad, params.step_scale);
  const Vector eps = standard_normal(rng, x.size());
  if (params.perturb_scale != 0.0) out += params.perturb_scale * cov.apply_factor(eps);
  return out;
}

/// log q(x|x') - log q(x'|x). Normalizing constants cancel and are skipped.
template <class Grad>
double log_proposal_ratio_gradient_shifted(const Vector& x, const Vector& x_prime, Grad&& grad,
                                           const SmoothCovariance& cov, const ProposalParams& params) {
  if (cov.dim() != x.size() || x.size() != x_prime.size())
    throw DimensionError("proposal ratio: dimension mismatch");
  const Vector reverse = x - proposal_mean(x_prime, grad, params.step_scale);
  const Vector forward = x_prime - proposal_mean(x, grad, params.step_scale);
  const double ps = params.perturb_scale;
  if (ps == 0.0) {
    // Point-mass proposal: only an exact hit has positive density.
    const bool rev = reverse.isZero(0.0), fwd = forward.isZero(0.0);
    if (rev && fwd) return 0.0;
    constexpr double inf = std::numeric_limits<double>::infinity();
    return rev ? inf : -inf;
  }
  const double r = cov.whiten(reverse).squaredNorm();
  const double f = cov.whiten(forward).squaredNorm();
  return 0.5 * (f - r) / (ps * ps);
}

// ---------------------------------------------------------------------------
// Shape proposal for segmentation.

/// Drift of the shape proposal: (x - x_{s,j}) / sigma_s^2 + data_gradient(y, x).
inline Vector shape_energy_gradient(const Vector& x, std::size_t j, int s, const TrainingSet& train,
                                    const GrayImage& y, const LikelihoodParams& likp) {
  if (j >= train.size(s)) throw std::out_of_range("shape proposal: training index out of range");
  const double sigma = train.sigma(s);
  require_positive_sigma(sigma);
  BinaryMask mask(y.width, y.height);
  for (std::size_t i = 0; i < mask.size(); ++i) mask.data[i] = x[Eigen::Index(i)] > 0.0;
  return (x - train.center(s, j)) / (sigma * sigma) + data_gradient(y, mask, likp);
}

namespace detail {
struct ShapeGradient {
  std::size_t j;
  int s;
  const TrainingSet& train;
  const GrayImage& y;
  const LikelihoodParams& likp;
  Vector operator()(const Vector& x) const { return shape_energy_gradient(x, j, s, train, y, likp); }
};
}  // namespace detail

inline LevelSet propose_shape(const LevelSet& x, std::size_t j, int s, const TrainingSet& train,
                              const GrayImage& y, const SmoothCovariance& cov, const ProposalParams& params,
                              const LikelihoodParams& likp, Rng& rng) {
  require_same_shape(x, y, "propose_shape");
  return LevelSet(x.width, x.height,
                  propose_gradient_shifted(x.data, detail::ShapeGradient{j, s, train, y, likp}, cov, params, rng));
}

inline double log_proposal_ratio(const LevelSet& x, const LevelSet& x_prime, std::size_t j, int s,
                                 const TrainingSet& train, const GrayImage& y, const SmoothCovariance& cov,
                                 const ProposalParams& params, const LikelihoodParams& likp) {
  require_same_shape(x, y, "log_proposal_ratio");
  require_same_shape(x_prime, y, "log_proposal_ratio");
  return log_proposal_ratio_gradient_shifted(x.data, x_prime.data, detail::ShapeGradient{j, s, train, y, likp},
                                             cov, params);
}

}  // namespace pmshape
