#pragma once

#include "pmshape/types.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace pmshape {

namespace detail {

// 1-D squared distance transform of a sampled function (Felzenszwalb & Huttenlocher).
// f holds 0 at feature points and kFar elsewhere; d receives min_q (p-q)^2 + f(q).
inline void edt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  v.resize(std::size_t(n));
  z.resize(std::size_t(n) + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      const int p = v[std::size_t(k)];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
      if (s <= z[std::size_t(k)] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[std::size_t(k)] = q;
    z[std::size_t(k)] = s;
    z[std::size_t(k) + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[std::size_t(k) + 1] < q) ++k;
    const int p = v[std::size_t(k)];
    d[q] = double(q - p) * (q - p) + f[p];
  }
}

// Exact squared Euclidean distance from each pixel to the nearest pixel whose
// mask value equals `target`. Pixels with no such pixel anywhere get +inf.
inline std::vector<double> squared_distance_to(const BinaryMask& mask, std::uint8_t target) {
  const int h = mask.height, w = mask.width;
  // Large but finite so the parabola intersections stay well defined.
  constexpr double kFar = 1e20;
  std::vector<double> g(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) g[i] = mask.data[i] == target ? 0.0 : kFar;

  std::vector<int> v;
  std::vector<double> z;
  std::vector<double> col_in(static_cast<std::size_t>(h)), col_out(static_cast<std::size_t>(h));
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) col_in[std::size_t(r)] = g[std::size_t(r) * w + c];
    edt_1d(col_in.data(), col_out.data(), h, v, z);
    for (int r = 0; r < h; ++r) g[std::size_t(r) * w + c] = col_out[std::size_t(r)];
  }
  std::vector<double> out(mask.size());
  for (int r = 0; r < h; ++r)
    edt_1d(g.data() + std::size_t(r) * w, out.data() + std::size_t(r) * w, w, v, z);
  for (double& e : out)
    if (e >= kFar) e = std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace detail

/// Signed Euclidean distance embedding: +distance to the nearest background
/// pixel inside the object, -distance to the nearest object pixel outside it.
/// When the opposite region is empty the magnitude is the image diagonal.
inline LevelSet mask_to_levelset(const BinaryMask& mask) {
  const auto to_outside = detail::squared_distance_to(mask, 0);
  const auto to_inside = detail::squared_distance_to(mask, 1);
  const double diag = std::hypot(double(mask.width), double(mask.height));
  Vector x(Eigen::Index(mask.size()));
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.data[i]) {
      x[Eigen::Index(i)] = std::isfinite(to_outside[i]) ? std::sqrt(to_outside[i]) : diag;
    } else {
      x[Eigen::Index(i)] = std::isfinite(to_inside[i]) ? -std::sqrt(to_inside[i]) : -diag;
    }
  }
  return LevelSet(mask.width, mask.height, std::move(x));
}

/// Pseudo-inverse of the embedding: pixel is object iff value > 0.
inline BinaryMask levelset_to_mask(const LevelSet& x) {
  BinaryMask m(x.width, x.height);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = x.data[Eigen::Index(i)] > 0.0 ? 1 : 0;
  return m;
}

struct RegionMeans {
  double mu_in = 0.5;
  double mu_out = 0.5;
};

/// Mean intensity over object and background pixels; an empty region has mean 0.5.
inline RegionMeans region_means(const GrayImage& y, const BinaryMask& mask) {
  require_same_shape(y, mask, "region_means");
  double sum_in = 0.0, sum_out = 0.0;
  std::size_t n_in = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.data[i]) {
      sum_in += y.data[Eigen::Index(i)];
      ++n_in;
    } else {
      sum_out += y.data[Eigen::Index(i)];
    }
  }
  const std::size_t n_out = mask.size() - n_in;
  RegionMeans m;
  if (n_in > 0) m.mu_in = sum_in / double(n_in);
  if (n_out > 0) m.mu_out = sum_out / double(n_out);
  return m;
}

}  // namespace pmshape
