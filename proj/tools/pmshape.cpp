// pmshape: pseudo-marginal shape sampling from the command line.
//
//   pmshape sample    --config run.cfg --out runs/a [--seed N] [--resume runs/a/checkpoint.txt]
//   pmshape benchmark --config bench.cfg --out runs/b
//   pmshape evaluate  --config eval.cfg --out runs/c
//
// --mnist-images/--mnist-labels switch the data source to IDX files;
// --synthetic overrides the synthetic dataset spec.

#include "pmshape/pmshape.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Pseudo-marginal MCMC segmentation with nonparametric shape priors"};
  app.require_subcommand(1);

  std::string config_path, out_dir, mnist_images, mnist_labels, synthetic, resume;
  std::optional<std::uint64_t> seed;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value configuration file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out_dir, "output directory")->required();
    cmd->add_option("--seed", seed, "overrides the config seed");
    auto* img = cmd->add_option("--mnist-images", mnist_images, "IDX image file");
    auto* lab = cmd->add_option("--mnist-labels", mnist_labels, "IDX label file");
    img->needs(lab);
    lab->needs(img);
    cmd->add_option("--synthetic", synthetic, "synthetic dataset spec, e.g. disks:20,squares:20,size:16");
  };
  auto* sample = app.add_subcommand("sample", "run a chain and write samples and confidence maps");
  auto* bench = app.add_subcommand("benchmark", "per-sample time against training-set size");
  auto* eval = app.add_subcommand("evaluate", "Dice of every sample against the reference mask");
  add_common(sample);
  add_common(bench);
  add_common(eval);
  sample->add_option("--resume", resume, "continue from a checkpoint file")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  pmshape::RunConfig cfg;
  try {
    cfg = pmshape::load_config(config_path);
    if (seed) cfg.sampler.seed = *seed;
    if (!mnist_images.empty()) {
      cfg.mnist_images = mnist_images;
      cfg.mnist_labels = mnist_labels;
    }
    if (!synthetic.empty()) pmshape::apply_setting(cfg, "synthetic", synthetic);
    pmshape::validate(cfg);
  } catch (const std::exception& e) {
    std::cerr << "pmshape: " << e.what() << "\n";
    return 2;
  }

  if (*sample) {
    std::optional<std::filesystem::path> r;
    if (!resume.empty()) r = resume;
    return pmshape::cmd_sample(cfg, out_dir, r);
  }
  if (*bench) return pmshape::cmd_benchmark(cfg, out_dir);
  return pmshape::cmd_evaluate(cfg, out_dir);
}
