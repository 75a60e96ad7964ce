#pragma once

#include "pmshape/dataset.hpp"
#include "pmshape/sampler.hpp"
#include "pmshape/types.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace pmshape {

/// Everything a command needs, loaded from `key = value` lines.
struct RunConfig {
  SamplerConfig sampler;

  // data
  std::string synthetic = "disks:20,squares:20,size:16,noise:0.2,test:disks";
  std::uint64_t data_seed = 7;
  std::string mnist_images, mnist_labels;  // when both set, MNIST replaces the synthetic data
  std::vector<int> classes;                // empty: every label present
  std::size_t per_class = 0;               // 0: every available image (synthetic only)
  std::size_t test_index = 0;              // MNIST image used as the test image, never trained on
  double binarize_threshold = 0.5;
  BandwidthMode bandwidth = BandwidthMode::per_class;
  std::optional<double> sigma;

  // outputs and experiments
  std::vector<double> map_thresholds = {0.1, 0.5, 0.9};
  std::vector<std::size_t> training_sizes = {1000, 5000, 10000};
  std::vector<PriorEstimator> estimators = {PriorEstimator::subsampled, PriorEstimator::full};

  bool use_mnist() const { return !mnist_images.empty() || !mnist_labels.empty(); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] inline void bad_value(const std::string& key, const std::string& value, const std::string& why) {
  throw ConfigError("config: " + key + " = '" + value + "': " + why);
}

template <class T>
T parse_integer(const std::string& key, const std::string& value, T lo) {
  T v{};
  const auto* end = value.data() + value.size();
  const auto [p, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || p != end) bad_value(key, value, "expected an integer");
  if (v < lo) bad_value(key, value, "must be at least " + std::to_string(lo));
  return v;
}

inline double parse_real(const std::string& key, const std::string& value, double lo, bool open_lo) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "expected a number");
  }
  if (used != value.size() || !std::isfinite(v)) bad_value(key, value, "expected a finite number");
  if (open_lo ? !(v > lo) : !(v >= lo))
    bad_value(key, value, std::string("must be ") + (open_lo ? "> " : ">= ") + std::to_string(lo));
  return v;
}

inline PriorEstimator parse_estimator(const std::string& key, const std::string& value) {
  if (value == "subsampled") return PriorEstimator::subsampled;
  if (value == "full") return PriorEstimator::full;
  bad_value(key, value, "expected subsampled or full");
}

}  // namespace detail

/// Applies one setting. Unknown keys and out-of-range values throw ConfigError.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  auto& ch = c.sampler.chain;
  auto real = [&](double lo, bool open) { return parse_real(key, value, lo, open); };

  if (key == "seed") c.sampler.seed = parse_integer<std::uint64_t>(key, value, 0);
  else if (key == "n_samples") ch.n_samples = parse_integer<std::size_t>(key, value, 1);
  else if (key == "burn_in") ch.burn_in = parse_integer<std::size_t>(key, value, 0);
  else if (key == "thin") ch.thin = parse_integer<std::size_t>(key, value, 1);
  else if (key == "m_hat") ch.m_hat = parse_integer<std::size_t>(key, value, 1);
  else if (key == "estimator") ch.estimator = parse_estimator(key, value);
  else if (key == "class_moves") ch.class_moves = parse_integer<int>(key, value, 0);
  else if (key == "shape_moves") ch.shape_moves = parse_integer<int>(key, value, 0);
  else if (key == "step_scale") c.sampler.proposal.step_scale = real(0.0, false);
  else if (key == "perturb_scale") c.sampler.proposal.perturb_scale = real(0.0, false);
  else if (key == "beta") c.sampler.likelihood.beta = real(0.0, true);
  else if (key == "blur_sigma") c.sampler.blur_sigma = real(0.0, false);
  else if (key == "cov_mode") {
    if (value == "dense") c.sampler.covariance.mode = CovarianceMode::dense;
    else if (value == "blur_operator") c.sampler.covariance.mode = CovarianceMode::blur_operator;
    else bad_value(key, value, "expected dense or blur_operator");
  } else if (key == "cov_cap") c.sampler.covariance.dense_cap = parse_integer<Eigen::Index>(key, value, 1);
  else if (key == "init") {
    if (value == "disk") c.sampler.init = InitMode::disk;
    else if (value == "training") c.sampler.init = InitMode::training;
    else bad_value(key, value, "expected disk or training");
  } else if (key == "init_disk_fraction") {
    const double f = real(0.0, true);
    if (f >= 1.0) bad_value(key, value, "must be < 1");
    c.sampler.init_disk_fraction = f;
  } else if (key == "synthetic") {
    SyntheticSpec::parse(value);  // validate now rather than mid-run
    c.synthetic = value;
  } else if (key == "data_seed") c.data_seed = parse_integer<std::uint64_t>(key, value, 0);
  else if (key == "mnist_images") c.mnist_images = value;
  else if (key == "mnist_labels") c.mnist_labels = value;
  else if (key == "classes") {
    c.classes.clear();
    for (const auto& t : split_list(value)) c.classes.push_back(parse_integer<int>(key, t, 0));
    if (c.classes.empty()) bad_value(key, value, "empty class list");
  } else if (key == "per_class") c.per_class = parse_integer<std::size_t>(key, value, 0);
  else if (key == "test_index") c.test_index = parse_integer<std::size_t>(key, value, 0);
  else if (key == "binarize_threshold") {
    const double t = real(0.0, false);
    if (t >= 1.0) bad_value(key, value, "must be < 1");
    c.binarize_threshold = t;
  } else if (key == "bandwidth") {
    if (value == "per_class") c.bandwidth = BandwidthMode::per_class;
    else if (value == "global") c.bandwidth = BandwidthMode::global;
    else bad_value(key, value, "expected per_class or global");
  } else if (key == "sigma") c.sigma = real(0.0, true);
  else if (key == "map_thresholds") {
    c.map_thresholds.clear();
    for (const auto& t : split_list(value)) {
      const double v = parse_real(key, t, 0.0, false);
      if (v > 1.0) bad_value(key, value, "thresholds must lie in [0, 1]");
      c.map_thresholds.push_back(v);
    }
  } else if (key == "training_sizes") {
    c.training_sizes.clear();
    for (const auto& t : split_list(value)) c.training_sizes.push_back(parse_integer<std::size_t>(key, t, 1));
    if (c.training_sizes.empty()) bad_value(key, value, "empty size list");
  } else if (key == "estimators") {
    c.estimators.clear();
    for (const auto& t : split_list(value)) c.estimators.push_back(parse_estimator(key, t));
    if (c.estimators.empty()) bad_value(key, value, "empty estimator list");
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

/// Cross-field checks that do not need the data.
inline void validate(const RunConfig& c) {
  const auto& ch = c.sampler.chain;
  if (ch.class_moves + ch.shape_moves == 0) throw ConfigError("config: class_moves and shape_moves are both 0");
  if (c.mnist_images.empty() != c.mnist_labels.empty())
    throw ConfigError("config: mnist_images and mnist_labels must be given together");
  validate(c.sampler.proposal);
  validate(c.sampler.likelihood);
}

/// Parses `key = value` lines; '#' starts a comment. Later keys override
/// earlier ones.
inline RunConfig parse_config(std::istream& in, RunConfig base = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    apply_setting(base, key, value);
  }
  validate(base);
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in);
}

/// Canonical `key = value` echo of every setting, loadable by parse_config.
inline std::string format_config(const RunConfig& c) {
  std::ostringstream o;
  o.precision(17);
  const auto& s = c.sampler;
  const auto& ch = s.chain;
  auto join = [](const auto& v, auto&& f) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
    return out;
  };
  auto num = [](double v) {
    std::ostringstream t;
    t.precision(17);
    t << v;
    return t.str();
  };
  o << "seed = " << s.seed << "\n"
    << "n_samples = " << ch.n_samples << "\n"
    << "burn_in = " << ch.burn_in << "\n"
    << "thin = " << ch.thin << "\n"
    << "m_hat = " << ch.m_hat << "\n"
    << "estimator = " << to_string(ch.estimator) << "\n"
    << "class_moves = " << ch.class_moves << "\n"
    << "shape_moves = " << ch.shape_moves << "\n"
    << "step_scale = " << num(s.proposal.step_scale) << "\n"
    << "perturb_scale = " << num(s.proposal.perturb_scale) << "\n"
    << "beta = " << num(s.likelihood.beta) << "\n"
    << "blur_sigma = " << num(s.blur_sigma) << "\n"
    << "cov_mode = " << (s.covariance.mode == CovarianceMode::dense ? "dense" : "blur_operator") << "\n"
    << "cov_cap = " << s.covariance.dense_cap << "\n"
    << "init = " << (s.init == InitMode::training ? "training" : "disk") << "\n"
    << "init_disk_fraction = " << num(s.init_disk_fraction) << "\n";
  if (c.use_mnist()) {
    o << "mnist_images = " << c.mnist_images << "\n"
      << "mnist_labels = " << c.mnist_labels << "\n"
      << "test_index = " << c.test_index << "\n";
  } else {
    o << "synthetic = " << c.synthetic << "\n"
      << "data_seed = " << c.data_seed << "\n";
  }
  if (!c.classes.empty()) o << "classes = " << join(c.classes, [](int v) { return std::to_string(v); }) << "\n";
  o << "per_class = " << c.per_class << "\n"
    << "binarize_threshold = " << num(c.binarize_threshold) << "\n"
    << "bandwidth = " << (c.bandwidth == BandwidthMode::global ? "global" : "per_class") << "\n";
  if (c.sigma) o << "sigma = " << num(*c.sigma) << "\n";
  o << "map_thresholds = " << join(c.map_thresholds, num) << "\n"
    << "training_sizes = " << join(c.training_sizes, [](std::size_t v) { return std::to_string(v); }) << "\n"
    << "estimators = " << join(c.estimators, [](PriorEstimator e) { return std::string(to_string(e)); }) << "\n";
  return o.str();
}

}  // namespace pmshape
