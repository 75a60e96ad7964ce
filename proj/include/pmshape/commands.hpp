#pragma once

#include "pmshape/analysis.hpp"
#include "pmshape/config.hpp"
#include "pmshape/dataset.hpp"
#include "pmshape/io.hpp"
#include "pmshape/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace pmshape {

/// Test image, its reference mask and the labelled image pool it came with.
struct Problem {
  GrayImage test;
  BinaryMask truth;
  std::vector<GrayImage> images;
  std::vector<int> labels;
  std::vector<std::string> names;  // display name per label value
  std::optional<std::size_t> test_index;  // into images, excluded from training
};

// Seeds of the auxiliary random streams, all split off the run seed.
inline constexpr std::uint64_t kTrainingStream = 0x7472;

inline Problem load_problem(const RunConfig& c) {
  Problem p;
  if (c.use_mnist()) {
    std::tie(p.images, p.labels) = load_idx_pair(c.mnist_images, c.mnist_labels);
    if (c.test_index >= p.images.size())
      throw ConfigError("test_index " + std::to_string(c.test_index) + " is out of range (" +
                        std::to_string(p.images.size()) + " images)");
    p.test = p.images[c.test_index];
    p.truth = binarize(p.test, c.binarize_threshold);
    p.test_index = c.test_index;
    const int top = p.labels.empty() ? 0 : *std::max_element(p.labels.begin(), p.labels.end());
    for (int l = 0; l <= top; ++l) p.names.push_back(std::to_string(l));
  } else {
    const auto ds = make_synthetic_dataset(SyntheticSpec::parse(c.synthetic), c.data_seed);
    p.test = ds.test_image;
    p.truth = ds.truth;
    for (const auto& m : ds.shapes) p.images.push_back(to_image(m));
    p.labels = ds.labels;
    p.names = ds.class_names;
  }
  return p;
}

inline std::vector<int> requested_classes(const RunConfig& c, const Problem& p) {
  if (!c.classes.empty()) return c.classes;
  const std::set<int> present(p.labels.begin(), p.labels.end());
  return {present.begin(), present.end()};
}

/// Training set of `per_class` images per requested class (0: as many as the
/// smallest class allows).
inline TrainingSet make_training_set(const RunConfig& c, const Problem& p, std::size_t per_class,
                                     std::uint64_t stream) {
  TrainingOptions o;
  o.classes = requested_classes(c, p);
  o.binarize_threshold = c.binarize_threshold;
  o.bandwidth = c.bandwidth;
  o.sigma = c.sigma;
  if (p.test_index) o.exclude.push_back(*p.test_index);
  if (per_class == 0) {
    per_class = p.images.size();
    for (int label : o.classes) {
      std::size_t n = 0;
      for (std::size_t i = 0; i < p.labels.size(); ++i) n += p.labels[i] == label && i != p.test_index;
      per_class = std::min(per_class, n);
    }
  }
  o.per_class = per_class;
  Rng rng(derive_seed(c.sampler.seed, stream));
  return build_training_set(p.images, p.labels, o, rng);
}

inline std::string class_name(const Problem& p, int label) {
  return label >= 0 && std::size_t(label) < p.names.size() ? p.names[std::size_t(label)] : std::to_string(label);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << text;
}

inline void write_records(const std::filesystem::path& path, const std::vector<SampleRecord>& records,
                          const TrainingSet& train, const BinaryMask& truth) {
  CsvWriter csv(path, {"sweep", "s", "accepted_class", "accepted_shape", "log_z", "log_lik", "dice"});
  for (const auto& r : records)
    csv.write(r.sweep, train.label(r.s), r.accepted_class, r.accepted_shape, r.log_z, r.log_lik, dice(r.mask, truth));
}

inline void write_histogram(const std::filesystem::path& path, const std::vector<SampleRecord>& records,
                            const TrainingSet& train, const Problem& p) {
  const auto h = class_histogram(records);
  CsvWriter csv(path, {"class", "name", "count", "fraction"});
  for (int s = 0; s < train.num_classes(); ++s) {
    const auto it = h.find(s);
    const std::size_t n = it == h.end() ? 0 : it->second;
    csv.write(train.label(s), class_name(p, train.label(s)), n, double(n) / double(records.size()));
  }
}

inline void write_frequency_csv(const std::filesystem::path& path, const ConfidenceMap& map) {
  std::vector<std::string> header;
  for (int c = 0; c < map.width; ++c) header.push_back("c" + std::to_string(c));
  CsvWriter csv(path, header);
  for (int r = 0; r < map.height; ++r) {
    std::vector<std::string> row;
    for (int c = 0; c < map.width; ++c) row.push_back(CsvWriter::cell(map.frequency[Eigen::Index(r) * map.width + c]));
    csv.row(row);
  }
}

inline std::string threshold_tag(double t) {
  std::ostringstream o;
  o << t;
  return o.str();
}

/// map_<tag>.pgm / .csv plus one level-curve mask per threshold.
inline void write_map(const std::filesystem::path& dir, const std::string& tag, const ConfidenceMap& map,
                      const std::vector<double>& thresholds) {
  write_pgm(dir / ("map_" + tag + ".pgm"), map.width, map.height, map.frequency);
  write_frequency_csv(dir / ("map_" + tag + ".csv"), map);
  for (double t : thresholds) write_pgm(dir / ("level_" + tag + "_" + threshold_tag(t) + ".pgm"), level_curve(map, t));
}

inline void write_maps(const std::filesystem::path& dir, const std::vector<SampleRecord>& records,
                       const TrainingSet& train, const std::vector<double>& thresholds) {
  write_map(dir, "all", confidence_map(records), thresholds);
  for (const auto& [s, n] : class_histogram(records))
    write_map(dir, "class_" + std::to_string(train.label(s)), confidence_map(records, s), thresholds);
}

struct DiceSummary {
  double mean = 0.0;
  double std = 0.0;
};

inline DiceSummary summarize_dice(const std::vector<SampleRecord>& records, const BinaryMask& truth) {
  DiceSummary d;
  if (records.empty()) return d;
  std::vector<double> v;
  for (const auto& r : records) v.push_back(dice(r.mask, truth));
  d.mean = pairwise_sum(v) / double(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - d.mean) * (x - d.mean);
  d.std = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
  return d;
}

namespace detail {
template <class F>
int guarded(const char* name, std::ostream& err, F&& f) {
  try {
    f();
    return 0;
  } catch (const std::exception& e) {
    err << "pmshape " << name << ": " << e.what() << "\n";
    return 1;
  }
}
}  // namespace detail

/// One chain on the test image: records.csv, histogram.csv, confidence maps,
/// summary.txt and checkpoint.txt. With `resume` the chain continues from a
/// checkpoint and the outputs cover only the remaining sweeps.
inline int cmd_sample(const RunConfig& c, const std::filesystem::path& out,
                      const std::optional<std::filesystem::path>& resume = std::nullopt,
                      std::ostream& log = std::clog, std::ostream& err = std::cerr) {
  return detail::guarded("sample", err, [&] {
    validate(c);
    std::optional<Checkpoint> cp;
    if (resume) {
      std::ifstream in(*resume);
      if (!in) throw ConfigError("cannot open checkpoint " + resume->string());
      cp = read_checkpoint(in);
    }
    const Problem p = load_problem(c);
    const TrainingSet train = make_training_set(c, p, c.per_class, kTrainingStream);
    validate(c.sampler.chain, train);
    std::filesystem::create_directories(out);
    write_text(out / "config.txt", format_config(c));

    log << "sample: " << train.num_classes() << " classes, " << train.total_size() << " shapes, "
        << total_sweeps(c.sampler.chain) << " sweeps\n";
    const SegmentationRun run = run_segmentation(p.test, train, c.sampler, nullptr, cp);

    write_records(out / "records.csv", run.records, train, p.truth);
    {
      std::ofstream f(out / "checkpoint.txt", std::ios::binary);
      write_checkpoint(f, run.final);
    }
    if (run.records.empty()) return;
    write_histogram(out / "histogram.csv", run.records, train, p);
    write_maps(out, run.records, train, c.map_thresholds);
    write_pgm(out / "test.pgm", p.test.width, p.test.height, p.test.data);

    const DiceSummary d = summarize_dice(run.records, p.truth);
    std::ostringstream s;
    s.precision(17);
    s << "samples = " << run.records.size() << "\n"
      << "class_acceptance = " << run.stats.class_acceptance() << "\n"
      << "shape_acceptance = " << run.stats.shape_acceptance() << "\n"
      << "mean_dice = " << d.mean << "\n"
      << "std_dice = " << d.std << "\n";
    for (int k = 0; k < train.num_classes(); ++k) s << "sigma_" << train.label(k) << " = " << train.sigma(k) << "\n";
    write_text(out / "summary.txt", s.str());
    log << "sample: mean Dice " << d.mean << ", acceptance class " << run.stats.class_acceptance() << " shape "
        << run.stats.shape_acceptance() << "\n";
  });
}

/// Per-sample time against training-set size for each estimator.
/// timing.csv holds per-sample CPU and wall-clock statistics; benchmark.csv
/// holds the seed-determined part of every run.
inline int cmd_benchmark(const RunConfig& c, const std::filesystem::path& out, std::ostream& log = std::clog,
                         std::ostream& err = std::cerr) {
  return detail::guarded("benchmark", err, [&] {
    validate(c);
    const Problem p = load_problem(c);
    const std::size_t n_classes = requested_classes(c, p).size();
    for (std::size_t size : c.training_sizes)
      if (size < 2 * n_classes)
        throw ConfigError("training size " + std::to_string(size) + " leaves fewer than 2 shapes per class");
    std::filesystem::create_directories(out);
    write_text(out / "config.txt", format_config(c));

    const SmoothCovariance cov = build_covariance(p.test.height, p.test.width, c.sampler);
    std::vector<TimingRun> wall_runs, cpu_runs;
    CsvWriter det(out / "benchmark.csv", {"estimator", "training_size", "per_class", "samples", "class_acceptance",
                                          "shape_acceptance", "mean_dice"});
    for (std::size_t k = 0; k < c.training_sizes.size(); ++k) {
      const std::size_t size = c.training_sizes[k];
      const std::size_t per_class = size / n_classes;
      const TrainingSet train = make_training_set(c, p, per_class, derive_seed(kTrainingStream, k));
      for (PriorEstimator e : c.estimators) {
        SamplerConfig sc = c.sampler;
        sc.chain.estimator = e;
        validate(sc.chain, train);
        const SegmentationRun run = run_segmentation(p.test, train, sc, &cov);
        TimingRun wall{size, e, {}}, cpu{size, e, {}};
        for (const auto& r : run.records) {
          wall.per_sample_seconds.push_back(r.seconds);
          cpu.per_sample_seconds.push_back(r.cpu_seconds);
        }
        wall_runs.push_back(std::move(wall));
        cpu_runs.push_back(std::move(cpu));
        det.write(to_string(e), size, per_class, run.records.size(), run.stats.class_acceptance(),
                  run.stats.shape_acceptance(), summarize_dice(run.records, p.truth).mean);
        log << "benchmark: " << to_string(e) << " size " << size << " done\n";
      }
    }
    CsvWriter csv(out / "timing.csv", {"estimator", "training_size", "samples", "mean_cpu_seconds", "std_cpu_seconds",
                                       "mean_wall_seconds", "std_wall_seconds"});
    const auto cpu = timing_report(cpu_runs), wall = timing_report(wall_runs);
    for (std::size_t i = 0; i < cpu.size(); ++i)
      csv.write(to_string(cpu[i].estimator), cpu[i].training_size, cpu[i].n, cpu[i].mean_seconds, cpu[i].std_seconds,
                wall[i].mean_seconds, wall[i].std_seconds);
  });
}

/// Dice of every sample against the reference mask, per estimator:
/// dice.csv with mean/std plus records_<estimator>.csv.
inline int cmd_evaluate(const RunConfig& c, const std::filesystem::path& out, std::ostream& log = std::clog,
                        std::ostream& err = std::cerr) {
  return detail::guarded("evaluate", err, [&] {
    validate(c);
    const Problem p = load_problem(c);
    const TrainingSet train = make_training_set(c, p, c.per_class, kTrainingStream);
    std::filesystem::create_directories(out);
    write_text(out / "config.txt", format_config(c));

    const SmoothCovariance cov = build_covariance(p.test.height, p.test.width, c.sampler);
    CsvWriter csv(out / "dice.csv", {"estimator", "mean_dice", "std_dice", "samples", "class_acceptance",
                                     "shape_acceptance"});
    for (PriorEstimator e : c.estimators) {
      SamplerConfig sc = c.sampler;
      sc.chain.estimator = e;
      validate(sc.chain, train);
      const SegmentationRun run = run_segmentation(p.test, train, sc, &cov);
      const DiceSummary d = summarize_dice(run.records, p.truth);
      csv.write(to_string(e), d.mean, d.std, run.records.size(), run.stats.class_acceptance(),
                run.stats.shape_acceptance());
      write_records(out / ("records_" + std::string(to_string(e)) + ".csv"), run.records, train, p.truth);
      write_histogram(out / ("histogram_" + std::string(to_string(e)) + ".csv"), run.records, train, p);
      log << "evaluate: " << to_string(e) << " mean Dice " << d.mean << " (std " << d.std << ")\n";
    }
  });
}

}  // namespace pmshape
