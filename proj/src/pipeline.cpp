#include "sinogan/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sinogan/errors.hpp"
#include "sinogan/io.hpp"
#include "sinogan/phantom.hpp"
#include "sinogan/random.hpp"

namespace sinogan::pipeline {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("'" + key + "' expects an integer, got '" + s + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' expects a number, got '" + s + "'");
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + s + "'");
}

struct ConfigField {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define SINOGAN_UINT_FIELD(KEY, MEMBER)                                                   \
  ConfigField {                                                                           \
    KEY, [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); },             \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_uint(KEY, v); } \
  }
#define SINOGAN_REAL_FIELD(KEY, MEMBER)                                                   \
  ConfigField {                                                                           \
    KEY, [](const ExperimentConfig& c) { return fmt_double(c.MEMBER); },                 \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_real(KEY, v); } \
  }

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      SINOGAN_UINT_FIELD("seed", seed),
      SINOGAN_UINT_FIELD("data.count", data_count),
      SINOGAN_UINT_FIELD("data.image_size", image_size),
      SINOGAN_UINT_FIELD("geometry.views", num_views),
      SINOGAN_UINT_FIELD("geometry.bins", num_bins),
      ConfigField{"noise.levels", [](const ExperimentConfig& c) { return format_noise_presets(c.noise); },
                  [](ExperimentConfig& c, const std::string& v) { c.noise = parse_noise_presets(v); }},
      SINOGAN_UINT_FIELD("osem.subsets", osem_subsets),
      SINOGAN_UINT_FIELD("osem.iterations", osem_iterations),
      SINOGAN_UINT_FIELD("train.epochs", train.epochs),
      SINOGAN_UINT_FIELD("train.batch_size", train.batch_size),
      SINOGAN_REAL_FIELD("train.learning_rate", train.learning_rate),
      SINOGAN_REAL_FIELD("train.beta1", train.beta1),
      SINOGAN_REAL_FIELD("train.beta2", train.beta2),
      SINOGAN_REAL_FIELD("train.lambda_l1", train.lambda_l1),
      SINOGAN_REAL_FIELD("train.channel_scale", train.channel_scale),
      ConfigField{"train.checkpoint", [](const ExperimentConfig& c) { return c.checkpoint; },
                  [](ExperimentConfig& c, const std::string& v) { c.checkpoint = v; }},
      SINOGAN_UINT_FIELD("eval.heldout_count", heldout_count),
      SINOGAN_UINT_FIELD("eval.heldout_seed_offset", heldout_seed_offset),
      ConfigField{"eval.shepp_logan", [](const ExperimentConfig& c) { return std::string(c.shepp_logan ? "true" : "false"); },
                  [](ExperimentConfig& c, const std::string& v) { c.shepp_logan = parse_bool("eval.shepp_logan", v); }},
      ConfigField{"output", [](const ExperimentConfig& c) { return c.output; },
                  [](ExperimentConfig& c, const std::string& v) { c.output = v; }},
  };
  return fields;
}

#undef SINOGAN_UINT_FIELD
#undef SINOGAN_REAL_FIELD

std::string phantom_stem(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "phantom_%05zu", id);
  return buf;
}

void ensure_fresh_dir(const fs::path& dir, const fs::path& marker, bool overwrite) {
  if (fs::exists(marker) && !overwrite) {
    throw IoError(marker.string() + " already exists (pass --overwrite to replace)");
  }
  fs::create_directories(dir);
}

std::string png_name(const std::string& stem, const std::vector<std::pair<double, double>>& windows) {
  std::string name = stem;
  for (const auto& [lo, hi] : windows) name += "_w" + fmt_short(lo) + "-" + fmt_short(hi);
  return name + ".png";
}

void write_panels(const fs::path& dir, const std::string& stem, const std::vector<std::vector<double>>& panels,
                  std::size_t rows, std::size_t cols) {
  std::vector<std::pair<double, double>> windows;
  for (const auto& p : panels) {
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    windows.emplace_back(*lo, *hi);
  }
  io::write_png_panels(dir / png_name(stem, windows), panels, rows, cols);
}

Sinogram normalised(const Sinogram& s, double peak) {
  Sinogram out = s;
  const double inv = peak > 0.0 ? 1.0 / peak : 1.0;
  for (double& v : out.values) v *= inv;
  return out;
}

bool is_sinogram_file(const fs::path& path) {
  const io::Bytes b = io::read_file(path);
  if (b.size() < 4) throw FormatError(path.string() + ": file too short");
  const std::string magic(b.begin(), b.begin() + 4);
  if (magic == "SNG1") return true;
  if (magic == "IMG1") return false;
  throw FormatError(path.string() + ": unknown file type");
}

}  // namespace

std::vector<NoisePreset> default_noise_presets() {
  return {{kNoiseLow.name, kNoiseLow.counts_scale},
          {kNoiseMedium.name, kNoiseMedium.counts_scale},
          {kNoiseHigh.name, kNoiseHigh.counts_scale}};
}

std::vector<NoisePreset> parse_noise_presets(const std::string& text) {
  std::vector<NoisePreset> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    const auto colon = item.find(':');
    if (colon == std::string::npos || colon == 0) throw ConfigError("noise level '" + item + "' is not name:counts");
    NoisePreset p{trim(item.substr(0, colon)), parse_real("noise.levels", trim(item.substr(colon + 1)))};
    if (!(p.counts_scale > 0.0)) throw ConfigError("noise level '" + p.name + "' needs positive counts");
    if (p.name.find_first_of("/\\ ") != std::string::npos) throw ConfigError("noise level name '" + p.name + "' is invalid");
    for (const auto& q : out) {
      if (q.name == p.name) throw ConfigError("duplicate noise level '" + p.name + "'");
    }
    out.push_back(std::move(p));
  }
  if (out.empty()) throw ConfigError("noise.levels is empty");
  return out;
}

std::string format_noise_presets(const std::vector<NoisePreset>& presets) {
  std::string s;
  for (std::size_t i = 0; i < presets.size(); ++i) {
    if (i) s += ",";
    s += presets[i].name + ":" + fmt_double(presets[i].counts_scale);
  }
  return s;
}

TrainConfig ExperimentConfig::default_train_config() {
  TrainConfig t;
  t.epochs = 20;
  t.batch_size = 16;
  t.channel_scale = 0.25;
  t.seed = 7;
  return t;
}

OsemConfig ExperimentConfig::osem() const {
  OsemConfig c;
  c.num_subsets = osem_subsets;
  c.num_iterations = osem_iterations;
  return c;
}

void ExperimentConfig::validate() const {
  geometry().validate();
  osem().validate(geometry());
  train.validate();
  if (noise.empty()) throw ConfigError("noise.levels is empty");
  if (num_views % 8 || num_bins % 8) throw ConfigError("geometry.views and geometry.bins must be divisible by 8");
  if (checkpoint.empty() && heldout_seed_offset < data_count) {
    throw ConfigError("eval.heldout_seed_offset must be at least data.count so held-out phantoms are unseen");
  }
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");
    const auto& fields = config_fields();
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const ConfigField& f) { return key == f.key; });
    if (it == fields.end()) throw ConfigError("unknown config key '" + key + "'");
    it->set(c, value);
  }
  c.train.seed = c.seed;
  return c;
}

std::string serialize_experiment_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : config_fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
  return out;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  try {
    return parse_experiment_config(io::read_text(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string serialize_manifest(const std::vector<ManifestRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["seed"] = r.seed;
    j["image"] = r.image;
    j["clean"] = r.clean;
    nlohmann::ordered_json noisy = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < r.levels.size(); ++i) {
      noisy.push_back({{"level", r.levels[i].name}, {"counts_scale", r.levels[i].counts_scale}, {"path", r.noisy[i]}});
    }
    j["noisy"] = noisy;
    out += j.dump() + "\n";
  }
  return out;
}

DatasetManifest load_manifest(const fs::path& path, bool check_files) {
  DatasetManifest m;
  m.directory = path.parent_path();
  std::istringstream in(io::read_text(path));
  std::set<std::size_t> ids;
  std::size_t index = 0;
  for (std::string line; std::getline(in, line); ++index) {
    if (trim(line).empty()) continue;
    const std::string where = path.string() + " record " + std::to_string(index);
    ManifestRecord r;
    try {
      const auto j = nlohmann::json::parse(line);
      r.id = j.at("id").get<std::size_t>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.image = j.at("image").get<std::string>();
      r.clean = j.at("clean").get<std::string>();
      for (const auto& n : j.at("noisy")) {
        r.levels.push_back({n.at("level").get<std::string>(), n.at("counts_scale").get<double>()});
        r.noisy.push_back(n.at("path").get<std::string>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!ids.insert(r.id).second) throw FormatError(where + ": duplicate id " + std::to_string(r.id));
    if (r.noisy.empty()) throw FormatError(where + ": no noisy sinograms");
    if (check_files) {
      auto check = [&](const std::string& rel, bool sinogram) {
        const fs::path p = m.directory / rel;
        if (!fs::exists(p)) throw IoError(where + ": missing file " + p.string());
        try {
          if (sinogram) {
            io::read_sinogram(p);
          } else {
            io::read_image(p);
          }
        } catch (const std::exception& e) {
          throw FormatError(where + ": " + e.what());
        }
      };
      check(r.image, false);
      check(r.clean, true);
      for (const auto& n : r.noisy) check(n, true);
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

std::vector<TrainingSample> load_training_set(const DatasetManifest& manifest) {
  std::vector<TrainingSample> out;
  out.reserve(manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    auto read = [&](const std::string& rel) {
      const fs::path p = manifest.directory / rel;
      if (!fs::exists(p)) throw IoError("manifest record " + std::to_string(i) + ": missing file " + p.string());
      try {
        return io::read_sinogram(p);
      } catch (const FormatError& e) {
        throw FormatError("manifest record " + std::to_string(i) + ": " + e.what());
      }
    };
    TrainingSample s;
    s.clean = read(r.clean);
    for (const auto& n : r.noisy) s.noisy.push_back(read(n));
    out.push_back(std::move(s));
  }
  return out;
}

std::uint64_t noise_seed(std::uint64_t phantom_seed, std::size_t level_index) {
  return CounterRng(phantom_seed, 0xa0 + level_index).next_u64();
}

void Log::operator()(const std::string& line) const {
  if (!quiet) std::cerr << line << std::endl;
}

fs::path cmd_gen_data(const GenDataOptions& o, const Log& log) {
  const fs::path manifest = o.out_dir / "manifest.jsonl";
  ensure_fresh_dir(o.out_dir, manifest, o.overwrite);
  const Geometry geometry{o.num_views, o.num_bins, o.image_size};
  geometry.validate();
  if (o.noise.empty()) throw ConfigError("gen-data: at least one noise level is required");

  std::vector<ManifestRecord> records;
  records.reserve(o.count);
  for (std::size_t i = 0; i < o.count; ++i) {
    ManifestRecord r;
    r.id = i;
    r.seed = o.seed + i;
    PhantomConfig pc;
    pc.seed = r.seed;
    pc.size = o.image_size;
    const Image img = generate_random_phantom(pc);
    const Sinogram clean = forward_project(img, geometry);
    const std::string stem = phantom_stem(i);
    r.image = "images/" + stem + ".img";
    r.clean = "sinograms/" + stem + "_clean.sng";
    io::write_image(o.out_dir / r.image, img);
    io::write_sinogram(o.out_dir / r.clean, clean);
    for (std::size_t l = 0; l < o.noise.size(); ++l) {
      const auto& level = o.noise[l];
      const std::string rel = "sinograms/" + stem + "_" + level.name + ".sng";
      io::write_sinogram(o.out_dir / rel, add_poisson_noise(clean, level.counts_scale, noise_seed(r.seed, l)));
      r.levels.push_back(level);
      r.noisy.push_back(rel);
    }
    records.push_back(std::move(r));
    if ((i + 1) % 500 == 0) log("gen-data: " + std::to_string(i + 1) + "/" + std::to_string(o.count));
  }
  io::write_text(manifest, serialize_manifest(records));
  log("gen-data: wrote " + std::to_string(o.count) + " phantoms to " + o.out_dir.string());
  return manifest;
}

fs::path cmd_train(const TrainOptions& o, const Log& log) {
  const fs::path ckpt_path = o.out_dir / kCheckpointFile;
  const fs::path trace_path = o.out_dir / kLossTraceFile;
  const bool resuming = o.resume && fs::exists(ckpt_path);
  if (!resuming) ensure_fresh_dir(o.out_dir, ckpt_path, o.overwrite);
  o.config.validate();

  const DatasetManifest manifest = load_manifest(o.manifest, true);
  if (manifest.records.empty()) throw ConfigError("train: manifest " + o.manifest.string() + " has no records");
  const std::vector<TrainingSample> data = load_training_set(manifest);
  log("train: loaded " + std::to_string(data.size()) + " phantoms");

  GanModel model;
  std::string trace = "step,loss_d,loss_g_adv,loss_g_l1\n";
  if (resuming) {
    model = from_checkpoint(load_checkpoint(ckpt_path));
    TrainConfig stored = model.config;
    stored.epochs = o.config.epochs;
    if (!(stored == o.config)) {
      throw ConfigError("train: checkpoint " + ckpt_path.string() + " was written with a different configuration");
    }
    model.config.epochs = o.config.epochs;
    if (fs::exists(trace_path)) {
      std::istringstream in(io::read_text(trace_path));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        if (parse_uint("loss trace step", line.substr(0, comma)) > model.steps) break;
        trace += line + "\n";
      }
    }
    log("train: resuming at epoch " + std::to_string(model.epochs_completed));
  } else {
    model = init_model(o.config, data[0].clean.views, data[0].clean.bins);
  }

  std::ostringstream pending;
  TrainHooks hooks;
  hooks.max_epochs_this_call = o.stop_after_epochs;
  double epoch_l1 = 0.0;
  std::size_t epoch_steps = 0;
  hooks.on_step = [&](const LossRecord& r) {
    pending << r.step << "," << fmt_double(r.loss_d) << "," << fmt_double(r.loss_g_adv) << ","
            << fmt_double(r.loss_g_l1) << "\n";
    epoch_l1 += r.loss_g_l1;
    ++epoch_steps;
  };
  hooks.on_epoch = [&](const GanModel& m) {
    trace += pending.str();
    pending.str({});
    save_checkpoint(ckpt_path, to_checkpoint(m));
    io::write_text(trace_path, trace);
    log("train: epoch " + std::to_string(m.epochs_completed) + "/" + std::to_string(m.config.epochs) +
        " mean l1 " + fmt_short(epoch_steps ? epoch_l1 / static_cast<double>(epoch_steps) : 0.0));
    epoch_l1 = 0.0;
    epoch_steps = 0;
  };
  hooks.on_diverge = [&](const GanModel& m) {
    save_checkpoint(o.out_dir / "diverged.ckpt", to_checkpoint(m));
    io::write_text(trace_path, trace + pending.str());
    log("train: diverged; state written to " + (o.out_dir / "diverged.ckpt").string());
  };
  if (model.epochs_completed == 0 && !resuming) {
    save_checkpoint(ckpt_path, to_checkpoint(model));
    io::write_text(trace_path, trace);
  }
  train(model, data, hooks);
  return ckpt_path;
}

void cmd_denoise(const fs::path& checkpoint, const fs::path& input, const fs::path& output) {
  const GanModel model = from_checkpoint(load_checkpoint(checkpoint));
  io::write_sinogram(output, denoise(model, io::read_sinogram(input)));
}

Image cmd_reconstruct(const ReconstructOptions& o) {
  const Sinogram sino = io::read_sinogram(o.input);
  const Geometry geometry{sino.views, sino.bins, o.image_size ? o.image_size : sino.bins};
  OsemConfig cfg;
  cfg.num_subsets = o.subsets;
  cfg.num_iterations = o.iterations;
  const Image img = osem_reconstruct(sino, geometry, cfg);
  io::write_image(o.output, img);
  if (o.png) {
    fs::path png = o.output;
    png.replace_extension(".png");
    io::write_png(png, img.values, img.rows, img.cols);
  }
  return img;
}

MetricsReport cmd_evaluate(const EvaluateOptions& o) {
  const bool sino = is_sinogram_file(o.test);
  if (sino != is_sinogram_file(o.reference)) throw FormatError("evaluate: test and reference are different file types");
  MetricsReport r;
  const std::string label = o.label.empty() ? o.test.filename().string() : o.label;
  if (sino) {
    r = evaluate_pair(io::read_sinogram(o.test), io::read_sinogram(o.reference), o.data_range, label);
  } else {
    r = evaluate_pair(io::read_image(o.test), io::read_image(o.reference), o.data_range, label);
  }
  if (!o.report.empty()) append_report(o.report, r, o.overwrite);
  return r;
}

StageError::StageError(const std::string& stage, const std::string& detail, const fs::path& out_dir)
    : std::runtime_error("stage '" + stage + "' failed: " + detail + " (partial results left in " + out_dir.string() +
                         ")"),
      stage_(stage) {}

std::string table_csv(const std::vector<TableRow>& rows) {
  std::string out = "noise_level,method,mape_pct,mse,ssim,psnr_db\n";
  for (const auto& r : rows) {
    out += r.noise_level + "," + r.method + "," + fmt_double(r.metrics.mape_pct) + "," + fmt_double(r.metrics.mse) +
           "," + fmt_double(r.metrics.ssim) + "," +
           (std::isinf(r.metrics.psnr_db) ? std::string("inf") : fmt_double(r.metrics.psnr_db)) + "\n";
  }
  return out;
}

LevelOutcome evaluate_level(const GanModel& model, const Image& phantom, const Sinogram& clean,
                            const NoisePreset& level, std::uint64_t seed, const OsemReconstructor& osem) {
  LevelOutcome o;
  o.noisy = add_poisson_noise(clean, level.counts_scale, seed);
  o.denoised = denoise(model, o.noisy);
  o.standard = osem.reconstruct(o.noisy);
  o.proposed = osem.reconstruct(o.denoised);
  const double peak = clean.max();
  const Sinogram ref = normalised(clean, peak);
  o.sino_noisy = evaluate_pair(normalised(o.noisy, peak), ref, 1.0, level.name + "/noisy");
  o.sino_denoised = evaluate_pair(normalised(o.denoised, peak), ref, 1.0, level.name + "/denoised");
  o.recon_standard = evaluate_pair(o.standard, phantom, std::nullopt, level.name + "/standard");
  o.recon_proposed = evaluate_pair(o.proposed, phantom, std::nullopt, level.name + "/proposed");
  return o;
}

std::vector<HeldoutSummary> evaluate_heldout(const GanModel& model, const ExperimentConfig& config,
                                             std::vector<TableRow>* per_case, const Log& log) {
  const Geometry geometry = config.geometry();
  const OsemReconstructor osem(geometry, config.osem());
  std::vector<HeldoutSummary> summary(config.noise.size());
  for (std::size_t l = 0; l < config.noise.size(); ++l) summary[l].noise_level = config.noise[l].name;
  for (std::size_t i = 0; i < config.heldout_count; ++i) {
    PhantomConfig pc;
    pc.seed = config.seed + config.heldout_seed_offset + i;
    pc.size = config.image_size;
    const Image phantom = generate_random_phantom(pc);
    const Sinogram clean = forward_project(phantom, geometry);
    for (std::size_t l = 0; l < config.noise.size(); ++l) {
      const LevelOutcome o = evaluate_level(model, phantom, clean, config.noise[l], noise_seed(pc.seed, l), osem);
      HeldoutSummary& s = summary[l];
      s.cases += 1;
      s.mean_mse_noisy += o.sino_noisy.mse;
      s.mean_mse_denoised += o.sino_denoised.mse;
      s.fraction_improved += o.sino_denoised.mse < o.sino_noisy.mse ? 1.0 : 0.0;
      s.mean_ssim_standard += o.recon_standard.ssim;
      s.mean_ssim_proposed += o.recon_proposed.ssim;
      s.mean_psnr_standard += o.recon_standard.psnr_db;
      s.mean_psnr_proposed += o.recon_proposed.psnr_db;
      if (per_case) {
        const std::string id = std::to_string(i);
        per_case->push_back({config.noise[l].name, "noisy_sinogram#" + id, o.sino_noisy});
        per_case->push_back({config.noise[l].name, "denoised_sinogram#" + id, o.sino_denoised});
        per_case->push_back({config.noise[l].name, "standard#" + id, o.recon_standard});
        per_case->push_back({config.noise[l].name, "proposed#" + id, o.recon_proposed});
      }
    }
    if ((i + 1) % 25 == 0) log("heldout: " + std::to_string(i + 1) + "/" + std::to_string(config.heldout_count));
  }
  for (auto& s : summary) {
    if (s.cases == 0) continue;
    const double n = static_cast<double>(s.cases);
    s.mean_mse_noisy /= n;
    s.mean_mse_denoised /= n;
    s.fraction_improved /= n;
    s.mean_ssim_standard /= n;
    s.mean_ssim_proposed /= n;
    s.mean_psnr_standard /= n;
    s.mean_psnr_proposed /= n;
  }
  return summary;
}

std::string heldout_csv(const std::vector<HeldoutSummary>& rows) {
  std::string out =
      "noise_level,cases,mean_mse_noisy,mean_mse_denoised,fraction_improved,mean_ssim_standard,mean_ssim_proposed,"
      "mean_psnr_standard,mean_psnr_proposed\n";
  for (const auto& r : rows) {
    out += r.noise_level + "," + std::to_string(r.cases) + "," + fmt_double(r.mean_mse_noisy) + "," +
           fmt_double(r.mean_mse_denoised) + "," + fmt_double(r.fraction_improved) + "," +
           fmt_double(r.mean_ssim_standard) + "," + fmt_double(r.mean_ssim_proposed) + "," +
           fmt_double(r.mean_psnr_standard) + "," + fmt_double(r.mean_psnr_proposed) + "\n";
  }
  return out;
}

ReproduceResult cmd_reproduce(const ExperimentConfig& config, const fs::path& out, bool overwrite, const Log& log) {
  ReproduceResult result;
  std::string stage = "config";
  try {
    config.validate();
    fs::create_directories(out);
    io::write_text(out / "experiment.cfg", serialize_experiment_config(config));

    if (!config.checkpoint.empty()) {
      result.checkpoint = config.checkpoint;
    } else {
      stage = "data";
      const fs::path data_dir = out / "data";
      const fs::path manifest = data_dir / "manifest.jsonl";
      if (overwrite || !fs::exists(manifest)) {
        GenDataOptions g;
        g.count = config.data_count;
        g.image_size = config.image_size;
        g.num_views = config.num_views;
        g.num_bins = config.num_bins;
        g.noise = config.noise;
        g.seed = config.seed;
        g.out_dir = data_dir;
        g.overwrite = overwrite;
        cmd_gen_data(g, log);
      } else if (load_manifest(manifest, false).records.size() != config.data_count) {
        throw ConfigError(manifest.string() + " does not match data.count (pass --overwrite to regenerate)");
      }

      stage = "train";
      TrainOptions t;
      t.manifest = manifest;
      t.config = config.train;
      t.out_dir = out / "train";
      t.resume = !overwrite;
      t.overwrite = overwrite;
      result.checkpoint = cmd_train(t, log);
    }

    stage = "load-checkpoint";
    const GanModel model = from_checkpoint(load_checkpoint(result.checkpoint));
    const Geometry geometry = config.geometry();
    const OsemReconstructor osem(geometry, config.osem());
    const fs::path tables = out / "tables";
    fs::create_directories(tables);

    if (config.shepp_logan) {
      stage = "shepp-logan";
      const fs::path dir = out / "shepp_logan";
      fs::create_directories(dir);
      const Image phantom = shepp_logan(config.image_size);
      const Sinogram clean = forward_project(phantom, geometry);
      io::write_image(dir / "phantom.img", phantom);
      io::write_sinogram(dir / "clean.sng", clean);
      write_panels(dir, "phantom", {phantom.values}, phantom.rows, phantom.cols);
      write_panels(dir, "clean_sinogram", {clean.values}, clean.views, clean.bins);
      const std::uint64_t sl_seed = CounterRng(config.seed, 0x5e99).next_u64();
      for (std::size_t l = 0; l < config.noise.size(); ++l) {
        const auto& level = config.noise[l];
        const LevelOutcome o = evaluate_level(model, phantom, clean, level, noise_seed(sl_seed, l), osem);
        io::write_sinogram(dir / (level.name + "_noisy.sng"), o.noisy);
        io::write_sinogram(dir / (level.name + "_denoised.sng"), o.denoised);
        io::write_image(dir / (level.name + "_standard.img"), o.standard);
        io::write_image(dir / (level.name + "_proposed.img"), o.proposed);
        write_panels(dir, level.name + "_sinograms_clean_noisy_denoised",
                     {clean.values, o.noisy.values, o.denoised.values}, clean.views, clean.bins);
        write_panels(dir, level.name + "_recon_phantom_standard_proposed",
                     {phantom.values, o.standard.values, o.proposed.values}, phantom.rows, phantom.cols);
        result.sinogram_table.push_back({level.name, "noisy", o.sino_noisy});
        result.sinogram_table.push_back({level.name, "denoised", o.sino_denoised});
        result.reconstruction_table.push_back({level.name, "standard", o.recon_standard});
        result.reconstruction_table.push_back({level.name, "proposed", o.recon_proposed});
      }
      io::write_text(tables / "sinogram_denoising.csv", table_csv(result.sinogram_table));
      io::write_text(tables / "osem_reconstruction.csv", table_csv(result.reconstruction_table));
      log("shepp-logan: tables written to " + tables.string());
    }

    if (config.heldout_count > 0) {
      stage = "heldout";
      std::vector<TableRow> cases;
      result.heldout = evaluate_heldout(model, config, &cases, log);
      io::write_text(tables / "heldout_summary.csv", heldout_csv(result.heldout));
      io::write_text(tables / "heldout_cases.csv", table_csv(cases));
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what(), out);
  }
  return result;
}

}  // namespace sinogan::pipeline
