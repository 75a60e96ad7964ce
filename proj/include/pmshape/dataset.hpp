#pragma once

#include "pmshape/geometry.hpp"
#include "pmshape/numeric.hpp"
#include "pmshape/shape_prior.hpp"
#include "pmshape/types.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace pmshape {

/// Binarizes an intensity image: 1 where value > threshold.
inline BinaryMask binarize(const GrayImage& img, double threshold = 0.5) {
  BinaryMask m(img.width, img.height);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = img.data[Eigen::Index(i)] > threshold;
  return m;
}

inline GrayImage to_image(const BinaryMask& m) {
  GrayImage g(m.width, m.height);
  for (std::size_t i = 0; i < m.size(); ++i) g.data[Eigen::Index(i)] = m.data[i];
  return g;
}

struct TrainingOptions {
  std::vector<int> classes;  // labels to keep, in class-index order
  std::size_t per_class = 0;
  double binarize_threshold = 0.5;
  BandwidthMode bandwidth = BandwidthMode::per_class;
  std::optional<double> sigma;  // skips calibration when set
  std::vector<std::size_t> exclude;  // image indices never selected (e.g. the test image)
};

/// Draws `per_class` images of every requested label without replacement,
/// binarizes them, embeds them as level sets and calibrates bandwidths.
inline TrainingSet build_training_set(const std::vector<GrayImage>& images, const std::vector<int>& labels,
                                      const TrainingOptions& opts, Rng& rng) {
  if (images.size() != labels.size()) throw FormatError("build_training_set: image/label count mismatch");
  if (images.empty()) throw ConfigError("build_training_set: no images");
  if (opts.classes.empty()) throw ConfigError("build_training_set: no classes requested");
  if (opts.per_class < 1) throw ConfigError("build_training_set: per_class must be at least 1");

  std::vector<bool> excluded(images.size(), false);
  for (auto i : opts.exclude)
    if (i < excluded.size()) excluded[i] = true;

  TrainingSet train(images.front().width, images.front().height);
  for (int label : opts.classes) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label && !excluded[i]) pool.push_back(i);
    if (pool.size() < opts.per_class)
      throw ConfigError("class " + std::to_string(label) + " has only " + std::to_string(pool.size()) +
                        " images, " + std::to_string(opts.per_class) + " requested");
    const auto picks = sample_without_replacement(pool.size(), opts.per_class, rng);
    Matrix centers(train.dim(), Eigen::Index(picks.size()));
    for (std::size_t k = 0; k < picks.size(); ++k) {
      const GrayImage& img = images[pool[picks[k]]];
      require_same_shape(img, train, "build_training_set");
      centers.col(Eigen::Index(k)) = mask_to_levelset(binarize(img, opts.binarize_threshold)).data;
    }
    train.add_class(label, std::move(centers));
  }
  if (opts.sigma) {
    for (int s = 0; s < train.num_classes(); ++s) train.set_sigma(s, *opts.sigma);
  } else {
    calibrate_training_set(train, opts.bandwidth);
  }
  return train;
}

// ---------------------------------------------------------------------------
// Synthetic shapes.

inline const std::vector<std::string>& shape_families() {
  static const std::vector<std::string> names = {"disks",     "squares",   "rings", "crosses", "triangles",
                                                 "hellipses", "vellipses", "hbars", "vbars",   "diamonds"};
  return names;
}

/// Whether normalized coordinates (u, v) (radius units, v pointing down) lie
/// inside a member of `family`. "ambiguous" is a superellipse halfway between
/// a disk and a square.
inline bool family_contains(const std::string& family, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  if (family == "disks") return u * u + v * v <= 1.0;
  if (family == "squares") return std::max(au, av) <= 0.9;
  if (family == "rings") {
    const double r = std::hypot(u, v);
    return r <= 1.0 && r >= 0.55;
  }
  if (family == "crosses") return (au <= 0.35 && av <= 1.0) || (av <= 0.35 && au <= 1.0);
  if (family == "triangles") return v <= 0.8 && au <= (v + 1.0) / 1.8;
  if (family == "hellipses") return (u / 1.2) * (u / 1.2) + (v / 0.6) * (v / 0.6) <= 1.0;
  if (family == "vellipses") return (u / 0.6) * (u / 0.6) + (v / 1.2) * (v / 1.2) <= 1.0;
  if (family == "hbars") return au <= 1.2 && av <= 0.35;
  if (family == "vbars") return au <= 0.35 && av <= 1.2;
  if (family == "diamonds") return au + av <= 1.15;
  if (family == "ambiguous") return std::pow(au / 0.95, 3.0) + std::pow(av / 0.95, 3.0) <= 1.0;
  throw ConfigError("unknown shape family '" + family + "'");
}

inline BinaryMask render_shape(const std::string& family, int size, double cy, double cx, double radius) {
  BinaryMask m(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) m(r, c) = family_contains(family, (c - cx) / radius, (r - cy) / radius);
  return m;
}

/// Parsed form of "disks:20,squares:20,size:16,noise:0.2,test:ambiguous".
/// Families become classes in the order listed, labelled 0, 1, ...
struct SyntheticSpec {
  std::vector<std::pair<std::string, std::size_t>> families;
  int size = 16;
  double noise = 0.2;
  std::string test = "ambiguous";  // "ambiguous" or a family name
  double radius = 0.3;             // nominal radius as a fraction of size
  double center_jitter = 0.08;     // fraction of size
  double scale_jitter = 0.15;      // relative radius jitter

  static SyntheticSpec parse(const std::string& text) {
    SyntheticSpec spec;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
      if (item.empty()) continue;
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("synthetic spec: expected key:value, got '" + item + "'");
      const std::string key = item.substr(0, colon), value = item.substr(colon + 1);
      try {
        if (key == "size") spec.size = std::stoi(value);
        else if (key == "noise") spec.noise = std::stod(value);
        else if (key == "test") spec.test = value;
        else if (key == "radius") spec.radius = std::stod(value);
        else if (key == "center_jitter") spec.center_jitter = std::stod(value);
        else if (key == "scale_jitter") spec.scale_jitter = std::stod(value);
        else {
          bool known = false;
          for (const auto& f : shape_families()) known = known || f == key;
          if (!known) throw ConfigError("synthetic spec: unknown shape family '" + key + "'");
          const long long n = std::stoll(value);
          if (n < 1) throw ConfigError("synthetic spec: family '" + key + "' needs a positive count");
          spec.families.emplace_back(key, std::size_t(n));
        }
      } catch (const std::logic_error& e) {
        if (dynamic_cast<const ConfigError*>(&e)) throw;
        throw ConfigError("synthetic spec: bad value for '" + key + "': " + value);
      }
    }
    if (spec.families.empty()) throw ConfigError("synthetic spec: no shape families given");
    if (spec.size < 4 || spec.size > 256) throw ConfigError("synthetic spec: size must be in [4, 256]");
    if (spec.noise < 0.0) throw ConfigError("synthetic spec: noise must be non-negative");
    if (spec.test != "ambiguous") family_contains(spec.test, 0.0, 0.0);  // validates the name
    return spec;
  }
};

struct SyntheticDataset {
  std::vector<BinaryMask> shapes;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  GrayImage test_image;
  BinaryMask truth;
};

/// Deterministic under `seed`. Shapes are jittered in center and radius; the
/// test image is the nominal (centered, unjittered) test shape plus Gaussian
/// noise, clamped to [0,1].
inline SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  SyntheticDataset ds;
  const double n = spec.size;
  const double c0 = 0.5 * (n - 1.0);
  auto jitter = [&](double amp) { return amp * (2.0 * uniform01(rng) - 1.0); };
  for (std::size_t k = 0; k < spec.families.size(); ++k) {
    const auto& [family, count] = spec.families[k];
    ds.class_names.push_back(family);
    for (std::size_t i = 0; i < count; ++i) {
      const double cy = c0 + jitter(spec.center_jitter * n);
      const double cx = c0 + jitter(spec.center_jitter * n);
      const double r = spec.radius * n * (1.0 + jitter(spec.scale_jitter));
      ds.shapes.push_back(render_shape(family, spec.size, cy, cx, r));
      ds.labels.push_back(int(k));
    }
  }
  ds.truth = render_shape(spec.test, spec.size, c0, c0, spec.radius * n);
  ds.test_image = GrayImage(spec.size, spec.size);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < ds.truth.size(); ++i) {
    const double v = ds.truth.data[i] + spec.noise * noise(rng);
    ds.test_image.data[Eigen::Index(i)] = std::clamp(v, 0.0, 1.0);
  }
  return ds;
}

/// All shapes of the dataset as a calibrated training set (one class per family).
inline TrainingSet synthetic_training_set(const SyntheticDataset& ds, BandwidthMode mode = BandwidthMode::per_class,
                                          std::optional<double> sigma = std::nullopt) {
  const int size = ds.truth.width;
  TrainingSet train(size, size);
  for (std::size_t k = 0; k < ds.class_names.size(); ++k) {
    std::vector<LevelSet> shapes;
    for (std::size_t i = 0; i < ds.shapes.size(); ++i)
      if (ds.labels[i] == int(k)) shapes.push_back(mask_to_levelset(ds.shapes[i]));
    train.add_class(int(k), shapes);
  }
  if (sigma) {
    for (int s = 0; s < train.num_classes(); ++s) train.set_sigma(s, *sigma);
  } else {
    calibrate_training_set(train, mode);
  }
  return train;
}

}  // namespace pmshape
