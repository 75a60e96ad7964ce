#pragma once

#include "pmshape/geometry.hpp"
#include "pmshape/types.hpp"

namespace pmshape {

// Piecewise-constant (Chan-Vese) data term. The likelihood does not depend on
// the shape class.

struct LikelihoodParams {
  double beta = 1.0;  // scales the Chan-Vese energy; must be > 0
};

inline void validate(const LikelihoodParams& p) {
  if (!(p.beta > 0.0)) throw ConfigError("likelihood beta must be positive");
}

/// -beta * sum of squared residuals against the region means of `mask`.
inline double log_likelihood(const GrayImage& y, const BinaryMask& mask, const LikelihoodParams& params) {
  validate(params);
  const RegionMeans m = region_means(y, mask);
  double in = 0.0, out = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double v = y.data[Eigen::Index(i)];
    if (mask.data[i])
      in += (v - m.mu_in) * (v - m.mu_in);
    else
      out += (v - m.mu_out) * (v - m.mu_out);
  }
  return -params.beta * (in + out);
}

/// log p(y|x) up to an additive constant, with the mask taken as levelset_to_mask(x).
inline double log_likelihood(const GrayImage& y, const LevelSet& x, const LikelihoodParams& params) {
  require_same_shape(y, x, "log_likelihood");
  return log_likelihood(y, levelset_to_mask(x), params);
}

/// beta * [(y - mu_in)^2 - (y - mu_out)^2] with the means frozen at the
/// current mask. Positive entries push the level set down (toward background).
inline Vector data_gradient(const GrayImage& y, const BinaryMask& mask, const LikelihoodParams& params) {
  const RegionMeans m = region_means(y, mask);
  return params.beta * ((y.data.array() - m.mu_in).square() - (y.data.array() - m.mu_out).square()).matrix();
}

inline Vector data_gradient(const GrayImage& y, const LevelSet& x, const LikelihoodParams& params) {
  require_same_shape(y, x, "data_gradient");
  return data_gradient(y, levelset_to_mask(x), params);
}

}  // namespace pmshape
