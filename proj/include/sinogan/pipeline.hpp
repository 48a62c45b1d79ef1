#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sinogan/gan.hpp"
#include "sinogan/metrics.hpp"
#include "sinogan/osem.hpp"
#include "sinogan/projector.hpp"

namespace sinogan::pipeline {

namespace fs = std::filesystem;

struct NoisePreset {
  std::string name;
  double counts_scale = 0.0;

  friend bool operator==(const NoisePreset&, const NoisePreset&) = default;
};

std::vector<NoisePreset> default_noise_presets();
// "low:200,medium:50,high:10"
std::vector<NoisePreset> parse_noise_presets(const std::string& text);
std::string format_noise_presets(const std::vector<NoisePreset>& presets);

// One declarative file drives a full run. Text form is one `key = value` per
// line; '#' starts a comment. Values are typed by key.
struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::size_t data_count = 5000;
  std::size_t image_size = 128;
  std::size_t num_views = 32;
  std::size_t num_bins = 128;
  std::vector<NoisePreset> noise = default_noise_presets();
  std::size_t osem_subsets = 4;
  std::size_t osem_iterations = 10;
  TrainConfig train = default_train_config();
  // Existing checkpoint; when set, data generation and training are skipped.
  std::string checkpoint;
  std::size_t heldout_count = 100;
  std::uint64_t heldout_seed_offset = 1000000;
  bool shepp_logan = true;
  // Default output directory for `reproduce`; --out overrides it.
  std::string output = "reproduce_out";

  static TrainConfig default_train_config();
  Geometry geometry() const { return {num_views, num_bins, image_size}; }
  OsemConfig osem() const;
  void validate() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig parse_experiment_config(const std::string& text);
std::string serialize_experiment_config(const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const fs::path& path);

// Line-delimited JSON, one phantom per line. Paths are relative to the
// manifest's directory.
struct ManifestRecord {
  std::size_t id = 0;
  std::uint64_t seed = 0;
  std::string image;
  std::string clean;
  std::vector<NoisePreset> levels;
  std::vector<std::string> noisy;  // parallel to levels

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  fs::path directory;
  std::vector<ManifestRecord> records;
};

std::string serialize_manifest(const std::vector<ManifestRecord>& records);
// Validates ids are unique and, when `check_files`, that every file parses.
// Errors name the record index and path.
DatasetManifest load_manifest(const fs::path& path, bool check_files = true);
std::vector<TrainingSample> load_training_set(const DatasetManifest& manifest);

// Per-phantom seeds are base_seed + index.
struct GenDataOptions {
  std::size_t count = 5000;
  std::size_t image_size = 128;
  std::size_t num_views = 32;
  std::size_t num_bins = 128;
  std::vector<NoisePreset> noise = default_noise_presets();
  std::uint64_t seed = 7;
  fs::path out_dir;
  bool overwrite = false;
};

std::uint64_t noise_seed(std::uint64_t phantom_seed, std::size_t level_index);

struct Log {
  bool quiet = false;
  void operator()(const std::string& line) const;
};

// Writes images/, sinograms/ and manifest.jsonl (last). Returns manifest path.
fs::path cmd_gen_data(const GenDataOptions& options, const Log& log = {});

struct TrainOptions {
  fs::path manifest;
  TrainConfig config = ExperimentConfig::default_train_config();
  fs::path out_dir;
  // Continue from out_dir/checkpoint.ckpt when present.
  bool resume = false;
  bool overwrite = false;
  // Stop after this many epochs in this invocation (0 = run to completion).
  std::size_t stop_after_epochs = 0;
};

inline constexpr const char* kCheckpointFile = "checkpoint.ckpt";
inline constexpr const char* kLossTraceFile = "loss_trace.csv";

// Writes checkpoint.ckpt after every epoch and loss_trace.csv
// (step,loss_d,loss_g_adv,loss_g_l1). Returns the checkpoint path.
fs::path cmd_train(const TrainOptions& options, const Log& log = {});

void cmd_denoise(const fs::path& checkpoint, const fs::path& input, const fs::path& output);

struct ReconstructOptions {
  fs::path input;
  fs::path output;
  std::size_t subsets = 4;
  std::size_t iterations = 10;
  std::size_t image_size = 0;  // 0 = number of detector bins
  bool png = false;
};

Image cmd_reconstruct(const ReconstructOptions& options);

struct EvaluateOptions {
  fs::path test;
  fs::path reference;
  std::optional<double> data_range;
  fs::path report;
  std::string label;
  bool overwrite = false;
};

MetricsReport cmd_evaluate(const EvaluateOptions& options);

class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& detail, const fs::path& out_dir);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// One row of the reproduction tables.
struct TableRow {
  std::string noise_level;
  std::string method;
  MetricsReport metrics;
};

std::string table_csv(const std::vector<TableRow>& rows);

// Sinogram metrics use data normalised by the clean sinogram maximum, range 1.
struct LevelOutcome {
  Sinogram noisy;
  Sinogram denoised;
  Image standard;  // OSEM of the noisy sinogram
  Image proposed;  // OSEM of the denoised sinogram
  MetricsReport sino_noisy;
  MetricsReport sino_denoised;
  MetricsReport recon_standard;
  MetricsReport recon_proposed;
};

LevelOutcome evaluate_level(const GanModel& model, const Image& phantom, const Sinogram& clean,
                            const NoisePreset& level, std::uint64_t seed, const OsemReconstructor& osem);

struct HeldoutSummary {
  std::string noise_level;
  std::size_t cases = 0;
  double mean_mse_noisy = 0.0;       // sinogram
  double mean_mse_denoised = 0.0;    // sinogram
  double fraction_improved = 0.0;    // denoised sinogram MSE < noisy
  double mean_ssim_standard = 0.0;   // reconstruction
  double mean_ssim_proposed = 0.0;
  double mean_psnr_standard = 0.0;
  double mean_psnr_proposed = 0.0;
};

// Phantoms with seeds base + offset + i, disjoint from the training range.
std::vector<HeldoutSummary> evaluate_heldout(const GanModel& model, const ExperimentConfig& config,
                                             std::vector<TableRow>* per_case = nullptr, const Log& log = {});

std::string heldout_csv(const std::vector<HeldoutSummary>& rows);

struct ReproduceResult {
  std::vector<TableRow> sinogram_table;        // noisy and denoised sinograms per level
  std::vector<TableRow> reconstruction_table;  // standard and proposed reconstructions per level
  std::vector<HeldoutSummary> heldout;
  fs::path checkpoint;
};

// Stages: data, train, shepp-logan, heldout. Each failure is reported as a
// StageError naming the stage.
ReproduceResult cmd_reproduce(const ExperimentConfig& config, const fs::path& out_dir, bool overwrite = false,
                              const Log& log = {});

}  // namespace sinogan::pipeline
