#pragma once

#include "pmshape/geometry.hpp"
#include "pmshape/likelihood.hpp"
#include "pmshape/numeric.hpp"
#include "pmshape/proposal.hpp"
#include "pmshape/shape_prior.hpp"
#include "pmshape/types.hpp"

#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <ctime>
#include <istream>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace pmshape {

// Pseudo-marginal Metropolis-Hastings-within-Gibbs over (s, x, z).
//
// z is an unbiased estimate of p(x|s) carried in the state as log z. It is
// drawn afresh only as part of a proposal and replaced only when that
// proposal is accepted; a rejected move leaves (s, x, log z) bit-identical.

enum class PriorEstimator { subsampled, full };

inline const char* to_string(PriorEstimator e) { return e == PriorEstimator::full ? "full" : "subsampled"; }

struct ChainState {
  int s = 0;
  Vector x;
  double log_z = 0.0;
  double log_lik = 0.0;  // cached log p(y|x) for the current x
};

struct ChainConfig {
  std::size_t n_samples = 1000;
  std::size_t burn_in = 200;
  std::size_t thin = 1;
  std::size_t m_hat = 10;
  PriorEstimator estimator = PriorEstimator::subsampled;
  int class_moves = 1;  // per sweep
  int shape_moves = 1;  // per sweep
};

inline void validate(const ChainConfig& c, const TrainingSet& train) {
  if (c.n_samples < 1) throw ConfigError("n_samples must be at least 1");
  if (c.thin < 1) throw ConfigError("thin must be at least 1");
  if (c.class_moves < 0 || c.shape_moves < 0 || c.class_moves + c.shape_moves == 0)
    throw ConfigError("moves per sweep must be non-negative and not both zero");
  if (c.estimator == PriorEstimator::subsampled) {
    if (c.m_hat < 1) throw ConfigError("m_hat must be at least 1");
    for (int s = 0; s < train.num_classes(); ++s)
      if (c.m_hat > train.size(s))
        throw ConfigError("m_hat=" + std::to_string(c.m_hat) + " exceeds the size of class " +
                          std::to_string(train.label(s)) + " (" + std::to_string(train.size(s)) + ")");
  }
}

/// What a shape move needs from the problem: the data term and a proposal
/// indexed by (training shape j, class s).
template <class M>
concept ShapeModel = requires(const M& m, const Vector& x, const Vector& xp, std::size_t j, int s, Rng& rng) {
  { m.log_likelihood(x) } -> std::convertible_to<double>;
  { m.propose(x, j, s, rng) } -> std::convertible_to<Vector>;
  { m.log_proposal_ratio(x, xp, j, s) } -> std::convertible_to<double>;
};

struct MoveResult {
  ChainState state;
  bool accepted = false;
  double log_ratio = 0.0;  // log of the MH ratio before min{1, .}
};

/// log z for (x, s): a fresh subsampled estimate, or the exact mixture.
inline double estimate_log_prior(const Vector& x, int s, const TrainingSet& train, const ChainConfig& cfg,
                                 Rng& rng) {
  if (cfg.estimator == PriorEstimator::full) return log_prior_full(x, s, train);
  return log_prior_subsampled(x, s, train, cfg.m_hat, rng).log_value;
}

/// General class-move ratio log[p(s') z' q(s|s') / (p(s) z q(s'|s))].
inline double class_move_log_ratio(double log_p_new, double log_z_new, double log_q_reverse, double log_p_old,
                                   double log_z_old, double log_q_forward) {
  return (log_p_new + log_z_new + log_q_reverse) - (log_p_old + log_z_old + log_q_forward);
}

/// Accept with probability min{1, exp(log_ratio)}. Always consumes one uniform.
/// NaN ratios reject.
inline bool mh_accept(double log_ratio, Rng& rng) {
  const double u = uniform01(rng);
  if (std::isnan(log_ratio)) return false;
  if (log_ratio >= 0.0) return true;
  return std::log(u) < log_ratio;
}

/// Class update: s' ~ U{classes}, fresh z' for (x, s'). With uniform p(s) and
/// uniform q the ratio reduces to z'/z.
inline MoveResult class_move(const ChainState& state, const TrainingSet& train, const ChainConfig& cfg, Rng& rng) {
  const int n = train.num_classes();
  const int s_new = int(uniform_index(rng, std::size_t(n)));
  double log_z_new;
  if (cfg.estimator == PriorEstimator::full && s_new == state.s)
    log_z_new = state.log_z;  // exact and deterministic: nothing to recompute
  else
    log_z_new = estimate_log_prior(state.x, s_new, train, cfg, rng);

  const double log_p = -std::log(double(n));   // p(s) = 1/n
  const double log_q = -std::log(double(n));   // q(s'|s) = 1/n
  const double log_ratio = class_move_log_ratio(log_p, log_z_new, log_q, log_p, state.log_z, log_q);

  MoveResult r{state, false, log_ratio};
  if (mh_accept(log_ratio, rng)) {
    r.accepted = true;
    r.state.s = s_new;
    r.state.log_z = log_z_new;
  }
  return r;
}

/// Shape update: j ~ U{0..m_s-1}, x' ~ q_{s,j}(.|x), fresh z' for (x', s).
template <ShapeModel Model>
MoveResult shape_move(const ChainState& state, const Model& model, const TrainingSet& train, const ChainConfig& cfg,
                      Rng& rng) {
  const std::size_t j = uniform_index(rng, train.size(state.s));
  Vector x_new = model.propose(state.x, j, state.s, rng);
  const double log_z_new = estimate_log_prior(x_new, state.s, train, cfg, rng);
  const double log_lik_new = model.log_likelihood(x_new);
  const double log_q = model.log_proposal_ratio(state.x, x_new, j, state.s);
  const double log_ratio = (log_z_new + log_lik_new) - (state.log_z + state.log_lik) + log_q;

  MoveResult r{state, false, log_ratio};
  if (mh_accept(log_ratio, rng)) {
    r.accepted = true;
    r.state.x = std::move(x_new);
    r.state.log_z = log_z_new;
    r.state.log_lik = log_lik_new;
  }
  return r;
}

struct SweepInfo {
  std::size_t sweep = 0;
  bool accepted_class = false;
  bool accepted_shape = false;
  double seconds = 0.0;      // wall time since the previous recorded sample
  double cpu_seconds = 0.0;  // process CPU time over the same interval
};

struct ChainStats {
  std::size_t class_proposed = 0, class_accepted = 0;
  std::size_t shape_proposed = 0, shape_accepted = 0;

  double class_acceptance() const { return class_proposed ? double(class_accepted) / double(class_proposed) : 0.0; }
  double shape_acceptance() const { return shape_proposed ? double(shape_accepted) / double(shape_proposed) : 0.0; }
};

inline std::size_t total_sweeps(const ChainConfig& cfg) { return cfg.burn_in + cfg.n_samples * cfg.thin; }

/// Runs sweeps [first_sweep, burn_in + n_samples * thin). Each sweep performs
/// the class moves then the shape moves; `sink(info, state)` receives every
/// kept sweep.
template <ShapeModel Model, class Sink>
ChainStats run_chain(const Model& model, const TrainingSet& train, const ChainConfig& cfg, ChainState& state,
                     Rng& rng, Sink&& sink, std::size_t first_sweep = 0) {
  validate(cfg, train);
  ChainStats stats;
  using Clock = std::chrono::steady_clock;
  auto last = Clock::now();
  std::clock_t last_cpu = std::clock();
  const std::size_t end = total_sweeps(cfg);
  for (std::size_t sweep = first_sweep; sweep < end; ++sweep) {
    if (sweep == cfg.burn_in) {  // burn-in is not charged to the first sample
      last = Clock::now();
      last_cpu = std::clock();
    }
    SweepInfo info{sweep, false, false, 0.0, 0.0};
    for (int k = 0; k < cfg.class_moves; ++k) {
      MoveResult r = class_move(state, train, cfg, rng);
      ++stats.class_proposed;
      if (r.accepted) {
        ++stats.class_accepted;
        info.accepted_class = true;
        state = std::move(r.state);
      }
    }
    for (int k = 0; k < cfg.shape_moves; ++k) {
      MoveResult r = shape_move(state, model, train, cfg, rng);
      ++stats.shape_proposed;
      if (r.accepted) {
        ++stats.shape_accepted;
        info.accepted_shape = true;
        state = std::move(r.state);
      }
    }
    if (sweep >= cfg.burn_in && (sweep + 1 - cfg.burn_in) % cfg.thin == 0) {
      const auto now = Clock::now();
      const std::clock_t now_cpu = std::clock();
      info.seconds = std::chrono::duration<double>(now - last).count();
      info.cpu_seconds = double(now_cpu - last_cpu) / CLOCKS_PER_SEC;
      last = now;
      last_cpu = now_cpu;
      sink(std::as_const(info), std::as_const(state));
    }
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Segmentation model: Chan-Vese likelihood, KDE prior, smooth proposal.

class SegmentationModel {
 public:
  SegmentationModel(const GrayImage& y, const TrainingSet& train, const SmoothCovariance& cov,
                    ProposalParams proposal, LikelihoodParams likelihood)
      : y_(y), train_(train), cov_(cov), proposal_(proposal), likelihood_(likelihood) {
    require_same_shape(y, train, "SegmentationModel");
    if (cov.dim() != train.dim()) throw DimensionError("SegmentationModel: covariance dimension mismatch");
    validate(proposal_);
    validate(likelihood_);
  }

  double log_likelihood(const Vector& x) const { return pmshape::log_likelihood(y_, mask_of(x), likelihood_); }

  Vector propose(const Vector& x, std::size_t j, int s, Rng& rng) const {
    return propose_gradient_shifted(x, gradient(j, s), cov_, proposal_, rng);
  }

  double log_proposal_ratio(const Vector& x, const Vector& x_prime, std::size_t j, int s) const {
    return log_proposal_ratio_gradient_shifted(x, x_prime, gradient(j, s), cov_, proposal_);
  }

  BinaryMask mask_of(const Vector& x) const {
    BinaryMask m(y_.width, y_.height);
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = x[Eigen::Index(i)] > 0.0;
    return m;
  }

  const GrayImage& image() const { return y_; }

 private:
  detail::ShapeGradient gradient(std::size_t j, int s) const { return {j, s, train_, y_, likelihood_}; }

  const GrayImage& y_;
  const TrainingSet& train_;
  const SmoothCovariance& cov_;
  ProposalParams proposal_;
  LikelihoodParams likelihood_;
};

enum class InitMode { disk, mask, training };

struct SamplerConfig {
  ChainConfig chain;
  ProposalParams proposal;
  LikelihoodParams likelihood;
  double blur_sigma = 2.0;
  CovarianceOptions covariance;
  std::uint64_t seed = 0;
  InitMode init = InitMode::disk;
  double init_disk_fraction = 0.25;
  std::optional<BinaryMask> init_mask;  // used when init == mask
};

struct SampleRecord {
  std::size_t sweep = 0;
  int s = 0;  // class index into the training set
  BinaryMask mask;
  double log_z = 0.0;
  double log_lik = 0.0;
  bool accepted_class = false;
  bool accepted_shape = false;
  double seconds = 0.0;      // wall time; excluded from equality
  double cpu_seconds = 0.0;  // excluded from equality
};

inline bool same_sample(const SampleRecord& a, const SampleRecord& b) {
  return a.sweep == b.sweep && a.s == b.s && a.mask == b.mask && a.log_z == b.log_z && a.log_lik == b.log_lik &&
         a.accepted_class == b.accepted_class && a.accepted_shape == b.accepted_shape;
}

/// Centered disk covering `fraction` of the image area.
inline BinaryMask centered_disk(int width, int height, double fraction) {
  BinaryMask m(width, height);
  const double r = std::sqrt(fraction * double(width) * height / std::numbers::pi);
  const double cy = 0.5 * (height - 1), cx = 0.5 * (width - 1);
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j) m(i, j) = std::hypot(i - cy, j - cx) <= r ? 1 : 0;
  return m;
}

/// s ~ U{classes}; x from the configured initializer; log z from the estimator.
inline ChainState init_chain(const GrayImage& y, const TrainingSet& train, const SamplerConfig& config, Rng& rng) {
  require_same_shape(y, train, "init_chain");
  validate(config.chain, train);
  ChainState st;
  st.s = int(uniform_index(rng, std::size_t(train.num_classes())));
  switch (config.init) {
    case InitMode::disk:
      st.x = mask_to_levelset(centered_disk(y.width, y.height, config.init_disk_fraction)).data;
      break;
    case InitMode::mask:
      if (!config.init_mask) throw ConfigError("init=mask requires an initial mask");
      require_same_shape(*config.init_mask, y, "init_chain");
      st.x = mask_to_levelset(*config.init_mask).data;
      break;
    case InitMode::training:
      st.x = train.center(st.s, uniform_index(rng, train.size(st.s)));
      break;
  }
  st.log_z = estimate_log_prior(st.x, st.s, train, config.chain, rng);
  BinaryMask mask(y.width, y.height);
  for (std::size_t i = 0; i < mask.size(); ++i) mask.data[i] = st.x[Eigen::Index(i)] > 0.0;
  st.log_lik = log_likelihood(y, mask, config.likelihood);
  return st;
}

/// Seed of the covariance construction for a run seeded with `seed`.
inline std::uint64_t covariance_seed(std::uint64_t seed) { return derive_seed(seed, 0x5157u); }

inline SmoothCovariance build_covariance(int height, int width, const SamplerConfig& config) {
  Rng rng(covariance_seed(config.seed));
  return build_smooth_covariance(height, width, config.blur_sigma, rng, config.covariance);
}

struct Checkpoint {
  std::size_t next_sweep = 0;
  ChainState state;
  Rng rng;
};

struct SegmentationRun {
  std::vector<SampleRecord> records;
  ChainStats stats;
  Checkpoint final;
};

/// Full segmentation chain. `cov` may be shared across runs with equal image
/// size and blur; when null it is built from the config seed. `resume`
/// continues a checkpointed chain and yields only the remaining records.
inline SegmentationRun run_segmentation(const GrayImage& y, const TrainingSet& train, const SamplerConfig& config,
                                        const SmoothCovariance* cov = nullptr,
                                        const std::optional<Checkpoint>& resume = std::nullopt) {
  std::optional<SmoothCovariance> own;
  if (!cov) {
    own = build_covariance(y.height, y.width, config);
    cov = &*own;
  }
  const SegmentationModel model(y, train, *cov, config.proposal, config.likelihood);

  SegmentationRun run;
  Rng rng(config.seed);
  ChainState state;
  std::size_t first = 0;
  if (resume) {
    if (resume->state.x.size() != train.dim() || resume->state.s < 0 || resume->state.s >= train.num_classes())
      throw ConfigError("checkpoint does not match the training set");
    state = resume->state;
    rng = resume->rng;
    first = resume->next_sweep;
  } else {
    state = init_chain(y, train, config, rng);
  }
  run.records.reserve(config.chain.n_samples);
  run.stats = run_chain(
      model, train, config.chain, state, rng,
      [&](const SweepInfo& info, const ChainState& st) {
        run.records.push_back({info.sweep, st.s, model.mask_of(st.x), st.log_z, st.log_lik, info.accepted_class,
                               info.accepted_shape, info.seconds, info.cpu_seconds});
      },
      first);
  run.final = {std::max(first, total_sweeps(config.chain)), std::move(state), rng};
  return run;
}

// ---------------------------------------------------------------------------
// Checkpoints: line-oriented text, doubles in hexadecimal floating point so
// that a resumed chain reproduces the uninterrupted one bit for bit.

inline constexpr const char* kCheckpointMagic = "pmshape-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {
inline std::string hex_double(double v) {
  std::ostringstream os;
  os << std::hexfloat << v;
  return os.str();
}
inline double parse_double(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw FormatError("checkpoint: bad number '" + tok + "'");
  return v;
}
inline std::string expect_key(std::istream& in, const char* key) {
  std::string k, v;
  if (!(in >> k >> v) || k != key) throw FormatError(std::string("checkpoint: expected '") + key + "'");
  return v;
}
}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& cp) {
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "sweep " << cp.next_sweep << '\n';
  out << "class " << cp.state.s << '\n';
  out << "log_z " << detail::hex_double(cp.state.log_z) << '\n';
  out << "log_lik " << detail::hex_double(cp.state.log_lik) << '\n';
  out << "dim " << cp.state.x.size() << '\n';
  out << "x";
  for (Eigen::Index i = 0; i < cp.state.x.size(); ++i) out << ' ' << detail::hex_double(cp.state.x[i]);
  out << '\n';
  out << "rng " << cp.rng << '\n';
}

inline Checkpoint read_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic) throw FormatError("checkpoint: bad header");
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint cp;
  cp.next_sweep = std::stoull(detail::expect_key(in, "sweep"));
  cp.state.s = std::stoi(detail::expect_key(in, "class"));
  cp.state.log_z = detail::parse_double(detail::expect_key(in, "log_z"));
  cp.state.log_lik = detail::parse_double(detail::expect_key(in, "log_lik"));
  const long long dim = std::stoll(detail::expect_key(in, "dim"));
  if (dim < 1) throw FormatError("checkpoint: bad dimension");
  std::string key;
  if (!(in >> key) || key != "x") throw FormatError("checkpoint: expected 'x'");
  cp.state.x.resize(Eigen::Index(dim));
  for (long long i = 0; i < dim; ++i) {
    std::string tok;
    if (!(in >> tok)) throw FormatError("checkpoint: truncated level set");
    cp.state.x[Eigen::Index(i)] = detail::parse_double(tok);
  }
  if (!(in >> key) || key != "rng" || !(in >> cp.rng)) throw FormatError("checkpoint: bad rng state");
  return cp;
}

}  // namespace pmshape
