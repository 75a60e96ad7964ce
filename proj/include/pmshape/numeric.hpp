#pragma once

#include "pmshape/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>

namespace pmshape {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2*pi)

/// Pairwise (cascade) summation. Error grows O(log n), so the result does not
/// depend on how a caller splits the work beyond rounding in the last bits.
inline double pairwise_sum(std::span<const double> v) {
  constexpr std::size_t kBlock = 16;
  if (v.size() <= kBlock) {
    double s = 0.0;
    for (double e : v) s += e;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

/// log(sum_i exp(terms[i])). Returns -inf for an empty span or all -inf terms.
inline double log_sum_exp(std::span<const double> terms) {
  if (terms.empty()) return -std::numeric_limits<double>::infinity();
  const double hi = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(hi)) return hi;
  // Small fixed buffer avoids a heap allocation for the common m_hat-sized case.
  constexpr std::size_t kStack = 64;
  if (terms.size() <= kStack) {
    double buf[kStack];
    for (std::size_t i = 0; i < terms.size(); ++i) buf[i] = std::exp(terms[i] - hi);
    return hi + std::log(pairwise_sum(std::span<const double>(buf, terms.size())));
  }
  std::vector<double> shifted(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) shifted[i] = std::exp(terms[i] - hi);
  return hi + std::log(pairwise_sum(shifted));
}

/// Uniform double in [0, 1).
inline double uniform01(Rng& rng) { return std::generate_canonical<double, 64>(rng); }

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

/// Fills `out` with i.i.d. unit Gaussians. The distribution object is local so
/// no cached variate survives the call; the engine state alone determines the
/// stream, which is what checkpoint/resume relies on.
inline void fill_standard_normal(Rng& rng, Eigen::Ref<Vector> out) {
  std::normal_distribution<double> n01(0.0, 1.0);
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = n01(rng);
}

inline Vector standard_normal(Rng& rng, Eigen::Index n) {
  Vector v(n);
  fill_standard_normal(rng, v);
  return v;
}

/// SplitMix64 finalizer; used to derive independent seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for run `index` under `master`: splitmix64(master + index).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master + index);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lo = *std::max_element(v.begin(), v.begin() + mid);
    m = 0.5 * (m + lo);
  }
  return m;
}

}  // namespace pmshape
