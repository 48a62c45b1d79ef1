#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sinogan/errors.hpp"
#include "sinogan/pipeline.hpp"

namespace pl = sinogan::pipeline;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool overwrite = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_seed) {
  cmd->add_option("--config", c.config, "Experiment config file")->check(CLI::ExistingFile);
  if (with_seed) cmd->add_option("--seed", c.seed, "Base seed (overrides the config)");
  cmd->add_flag("--overwrite", c.overwrite, "Replace existing outputs");
  cmd->add_flag("--quiet", c.quiet, "Suppress progress messages");
}

pl::ExperimentConfig load_config(const Common& c) {
  pl::ExperimentConfig cfg = c.config.empty() ? pl::ExperimentConfig{} : pl::load_experiment_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.train.seed = *c.seed;
  }
  return cfg;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sinogram denoising with a conditional GAN, OSEM reconstruction and evaluation"};
  app.require_subcommand(1);
  Common common;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate random phantoms and their clean/noisy sinograms");
  add_common(gen, common, true);
  gen->add_option("--out", common.out, "Output directory")->required();
  std::optional<std::size_t> gen_count, gen_size, gen_views, gen_bins;
  std::string gen_noise;
  gen->add_option("--count", gen_count, "Number of phantoms");
  gen->add_option("--size", gen_size, "Image size in pixels");
  gen->add_option("--views", gen_views, "Number of projection views");
  gen->add_option("--bins", gen_bins, "Detector bins per view");
  gen->add_option("--noise", gen_noise, "Noise levels as name:counts,...");

  // train
  auto* tr = app.add_subcommand("train", "Train the denoiser on a generated dataset");
  add_common(tr, common, true);
  tr->add_option("--out", common.out, "Output directory")->required();
  std::string tr_manifest;
  std::optional<std::size_t> tr_epochs, tr_batch, tr_stop;
  std::optional<double> tr_scale, tr_lr;
  bool tr_resume = false;
  tr->add_option("--manifest", tr_manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  tr->add_option("--epochs", tr_epochs, "Total epochs");
  tr->add_option("--batch-size", tr_batch, "Batch size");
  tr->add_option("--channel-scale", tr_scale, "Channel width multiplier in (0, 1]");
  tr->add_option("--learning-rate", tr_lr, "Adam learning rate");
  tr->add_flag("--resume", tr_resume, "Continue from the checkpoint in --out");
  tr->add_option("--stop-after", tr_stop, "Stop after this many epochs in this run");

  // denoise
  auto* dn = app.add_subcommand("denoise", "Denoise a sinogram with a trained checkpoint");
  std::string dn_ckpt, dn_in;
  dn->add_option("--checkpoint", dn_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  dn->add_option("--in", dn_in, "Input sinogram (SNG1)")->required()->check(CLI::ExistingFile);
  dn->add_option("--out", common.out, "Output sinogram")->required();
  dn->add_flag("--quiet", common.quiet, "Suppress progress messages");

  // reconstruct
  auto* rc = app.add_subcommand("reconstruct", "OSEM reconstruction of a sinogram");
  pl::ReconstructOptions rc_opts;
  std::string rc_in;
  rc->add_option("--in", rc_in, "Input sinogram (SNG1)")->required()->check(CLI::ExistingFile);
  rc->add_option("--out", common.out, "Output image (IMG1)")->required();
  rc->add_option("--subsets", rc_opts.subsets, "Number of subsets")->capture_default_str();
  rc->add_option("--iterations", rc_opts.iterations, "Full passes over the data")->capture_default_str();
  rc->add_option("--size", rc_opts.image_size, "Image size (default: detector bins)");
  rc->add_flag("--png", rc_opts.png, "Also write a PNG next to the output");
  rc->add_flag("--quiet", common.quiet, "Suppress progress messages");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Compare a test image or sinogram to a reference");
  std::string ev_test, ev_ref, ev_report;
  std::optional<double> ev_range;
  std::string ev_label;
  ev->add_option("--test", ev_test, "Test file (IMG1 or SNG1)")->required()->check(CLI::ExistingFile);
  ev->add_option("--reference", ev_ref, "Reference file of the same type")->required()->check(CLI::ExistingFile);
  ev->add_option("--data-range", ev_range, "Data range for PSNR/SSIM (default: reference max)");
  ev->add_option("--report,--out", ev_report, "Report path (.json or CSV); rows are appended");
  ev->add_option("--label", ev_label, "Row label");
  ev->add_flag("--overwrite", common.overwrite, "Replace the report instead of appending");
  ev->add_flag("--quiet", common.quiet, "Do not print the metrics");

  // reproduce
  auto* rp = app.add_subcommand("reproduce", "Run data generation, training and evaluation end to end");
  add_common(rp, common, true);
  rp->add_option("--out", common.out, "Output directory (default: the config's output)");
  std::string rp_ckpt;
  rp->add_option("--checkpoint", rp_ckpt, "Use an existing checkpoint and skip data generation and training");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  const pl::Log log{common.quiet};
  try {
    if (gen->parsed()) {
      const auto cfg = load_config(common);
      pl::GenDataOptions o;
      o.count = gen_count.value_or(cfg.data_count);
      o.image_size = gen_size.value_or(cfg.image_size);
      o.num_views = gen_views.value_or(cfg.num_views);
      o.num_bins = gen_bins.value_or(cfg.num_bins);
      o.noise = gen_noise.empty() ? cfg.noise : pl::parse_noise_presets(gen_noise);
      o.seed = cfg.seed;
      o.out_dir = common.out;
      o.overwrite = common.overwrite;
      std::cout << pl::cmd_gen_data(o, log).string() << "\n";
    } else if (tr->parsed()) {
      const auto cfg = load_config(common);
      pl::TrainOptions o;
      o.manifest = tr_manifest;
      o.config = cfg.train;
      if (tr_epochs) o.config.epochs = *tr_epochs;
      if (tr_batch) o.config.batch_size = *tr_batch;
      if (tr_scale) o.config.channel_scale = *tr_scale;
      if (tr_lr) o.config.learning_rate = *tr_lr;
      o.out_dir = common.out;
      o.resume = tr_resume;
      o.overwrite = common.overwrite;
      o.stop_after_epochs = tr_stop.value_or(0);
      std::cout << pl::cmd_train(o, log).string() << "\n";
    } else if (dn->parsed()) {
      pl::cmd_denoise(dn_ckpt, dn_in, common.out);
      log("denoise: wrote " + common.out);
    } else if (rc->parsed()) {
      rc_opts.input = rc_in;
      rc_opts.output = common.out;
      pl::cmd_reconstruct(rc_opts);
      log("reconstruct: wrote " + common.out);
    } else if (ev->parsed()) {
      pl::EvaluateOptions o;
      o.test = ev_test;
      o.reference = ev_ref;
      o.data_range = ev_range;
      o.report = ev_report;
      o.label = ev_label;
      o.overwrite = common.overwrite;
      const auto r = pl::cmd_evaluate(o);
      if (!common.quiet) {
        std::cout << "mape_pct=" << fmt(r.mape_pct) << " mse=" << fmt(r.mse) << " ssim=" << fmt(r.ssim)
                  << " psnr_db=" << fmt(r.psnr_db) << "\n";
      }
    } else if (rp->parsed()) {
      auto cfg = load_config(common);
      if (!rp_ckpt.empty()) cfg.checkpoint = rp_ckpt;
      const std::string out = common.out.empty() ? cfg.output : common.out;
      const auto result = pl::cmd_reproduce(cfg, out, common.overwrite, log);
      if (!common.quiet) {
        std::cout << pl::table_csv(result.reconstruction_table);
        std::cout << pl::heldout_csv(result.heldout);
      }
    }
  } catch (const pl::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const sinogan::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
