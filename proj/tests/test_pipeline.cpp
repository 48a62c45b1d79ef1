#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "sinogan/errors.hpp"
#include "sinogan/io.hpp"
#include "sinogan/phantom.hpp"
#include "sinogan/pipeline.hpp"
#include "sinogan/projector.hpp"
#include "support.hpp"

using namespace sinogan;
using namespace sinogan::pipeline;

namespace {

const Log quiet{true};

std::map<std::string, io::Bytes> snapshot(const fs::path& root) {
  std::map<std::string, io::Bytes> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_file(e.path());
  }
  return out;
}

GenDataOptions tiny_data(const fs::path& dir, std::size_t count = 6) {
  GenDataOptions g;
  g.count = count;
  g.image_size = 16;
  g.num_views = 16;
  g.num_bins = 16;
  g.seed = 40;
  g.out_dir = dir;
  return g;
}

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig c = ExperimentConfig::default_train_config();
  c.epochs = epochs;
  c.batch_size = 4;
  c.channel_scale = 1.0 / 64.0;
  c.seed = 5;
  return c;
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.seed = 11;
  c.data_count = 8;
  c.image_size = 16;
  c.num_views = 16;
  c.num_bins = 16;
  c.osem_subsets = 2;
  c.osem_iterations = 3;
  c.train = tiny_train(2);
  c.train.seed = c.seed;
  c.heldout_count = 3;
  c.heldout_seed_offset = 1000;
  return c;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

template <class E, class F>
std::string error_text(F&& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  }
  FAIL("expected exception");
  return {};
}

}  // namespace

TEST_CASE("experiment config defaults, round trip and errors") {
  const ExperimentConfig d;
  CHECK(d.num_views == 32);
  CHECK(d.num_bins == 128);
  CHECK(d.image_size == 128);
  CHECK(d.data_count == 5000);
  CHECK(d.osem_subsets == 4);
  CHECK(d.osem_iterations == 10);
  CHECK(d.train.learning_rate == 2e-4);
  CHECK(d.train.beta1 == 0.5);
  CHECK(d.train.beta2 == 0.999);
  CHECK(d.train.lambda_l1 == 100.0);
  CHECK(d.noise == std::vector<NoisePreset>{{"low", 200}, {"medium", 50}, {"high", 10}});

  ExperimentConfig c = tiny_experiment();
  c.noise = {{"a", 12.5}, {"b", 0.1}};
  c.train.learning_rate = 3e-4 / 7.0;
  c.checkpoint = "some/path.ckpt";
  c.shepp_logan = false;
  c.output = "elsewhere";
  const ExperimentConfig back = parse_experiment_config(serialize_experiment_config(c));
  CHECK(back == c);

  const ExperimentConfig p = parse_experiment_config("# comment\n\nseed = 9   # trailing\n  geometry.views=16\n");
  CHECK(p.seed == 9);
  CHECK(p.train.seed == 9);
  CHECK(p.num_views == 16);
  CHECK(p.num_bins == 128);

  CHECK(error_text<ConfigError>([] { parse_experiment_config("sede = 1\n"); }).find("sede") != std::string::npos);
  CHECK(error_text<ConfigError>([] { parse_experiment_config("seed = 1\nseed = 2\n"); }).find("seed") !=
        std::string::npos);
  CHECK_THROWS_AS(parse_experiment_config("seed 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("seed = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("train.learning_rate = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("eval.shepp_logan = yes\n"), ConfigError);

  ExperimentConfig bad = tiny_experiment();
  bad.num_views = 12;
  CHECK(error_text<ConfigError>([&] { bad.validate(); }).find("divisible") != std::string::npos);
  bad = tiny_experiment();
  bad.heldout_seed_offset = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.checkpoint = "given.ckpt";
  CHECK_NOTHROW(bad.validate());

  testing::TempDir dir("cfg_file");
  io::write_text(dir / "x.cfg", "unknown.key = 1\n");
  CHECK(error_text<ConfigError>([&] { load_experiment_config(dir / "x.cfg"); }).find("x.cfg") != std::string::npos);
}

TEST_CASE("shipped configs parse and validate") {
  for (const char* name : {"desk.cfg", "smoke.cfg"}) {
    const ExperimentConfig c = load_experiment_config(fs::path(SINOGAN_SOURCE_DIR) / "configs" / name);
    CHECK_NOTHROW(c.validate());
  }
  const ExperimentConfig desk = load_experiment_config(fs::path(SINOGAN_SOURCE_DIR) / "configs" / "desk.cfg");
  CHECK(desk.train.channel_scale == 0.25);
  CHECK(desk.data_count == 5000);
  CHECK(desk.heldout_count == 100);
}

TEST_CASE("noise presets parse and format") {
  const auto p = parse_noise_presets("low:200, medium:50,high:10");
  CHECK(p == default_noise_presets());
  CHECK(format_noise_presets(p) == "low:200,medium:50,high:10");
  CHECK(parse_noise_presets(format_noise_presets({{"x", 0.125}})) == std::vector<NoisePreset>{{"x", 0.125}});
  CHECK_THROWS_AS(parse_noise_presets(""), ConfigError);
  CHECK_THROWS_AS(parse_noise_presets("low"), ConfigError);
  CHECK_THROWS_AS(parse_noise_presets("low:0"), ConfigError);
  CHECK_THROWS_AS(parse_noise_presets("low:-3"), ConfigError);
  CHECK_THROWS_AS(parse_noise_presets("a:1,a:2"), ConfigError);
  CHECK_THROWS_AS(parse_noise_presets("a/b:1"), ConfigError);
}

TEST_CASE("gen-data writes a consistent dataset deterministically") {
  testing::TempDir a("gen_a"), b("gen_b");
  const fs::path m = cmd_gen_data(tiny_data(a.path), quiet);
  cmd_gen_data(tiny_data(b.path), quiet);
  CHECK(m == a.path / "manifest.jsonl");

  const auto sa = snapshot(a.path), sb = snapshot(b.path);
  CHECK(sa == sb);
  // One image, one clean and one noisy sinogram per level, plus the manifest.
  CHECK(sa.size() == 6 * (2 + 3) + 1);

  const DatasetManifest dm = load_manifest(m);
  REQUIRE(dm.records.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& r = dm.records[i];
    CHECK(r.id == i);
    CHECK(r.seed == 40 + i);
    CHECK(r.levels == default_noise_presets());
    PhantomConfig pc;
    pc.seed = r.seed;
    pc.size = 16;
    const Image img = generate_random_phantom(pc);
    CHECK(io::read_image(a.path / r.image) == img);
    const Sinogram clean = forward_project(img, Geometry{16, 16, 16});
    CHECK(io::read_sinogram(a.path / r.clean) == clean);
    for (std::size_t l = 0; l < r.levels.size(); ++l) {
      const Sinogram noisy = io::read_sinogram(a.path / r.noisy[l]);
      CHECK(noisy == add_poisson_noise(clean, r.levels[l].counts_scale, noise_seed(r.seed, l)));
      CHECK(noisy.counts_scale == r.levels[l].counts_scale);
    }
  }
  CHECK(noise_seed(40, 0) != noise_seed(40, 1));
  CHECK(noise_seed(40, 0) != noise_seed(41, 0));

  const auto samples = load_training_set(dm);
  REQUIRE(samples.size() == 6);
  CHECK(samples[2].noisy.size() == 3);

  CHECK_THROWS_AS(cmd_gen_data(tiny_data(a.path), quiet), IoError);
  auto o = tiny_data(a.path, 2);
  o.overwrite = true;
  cmd_gen_data(o, quiet);
  CHECK(load_manifest(m).records.size() == 2);
}

TEST_CASE("gen-data edge cases") {
  testing::TempDir dir("gen_edge");
  auto o = tiny_data(dir / "zero", 0);
  const fs::path m = cmd_gen_data(o, quiet);
  CHECK(io::read_text(m).empty());
  CHECK(load_manifest(m).records.empty());

  auto bad = tiny_data(dir / "bad");
  bad.num_bins = 0;
  CHECK_THROWS(cmd_gen_data(bad, quiet));
  bad = tiny_data(dir / "bad2");
  bad.noise.clear();
  CHECK_THROWS_AS(cmd_gen_data(bad, quiet), ConfigError);
}

TEST_CASE("gen-data file count scales with phantoms and levels") {
  testing::TempDir dir("gen_count");
  auto o = tiny_data(dir.path, 100);
  cmd_gen_data(o, quiet);
  std::size_t images = 0, clean = 0, noisy = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path)) {
    const std::string n = e.path().filename().string();
    if (n.ends_with(".img")) ++images;
    else if (n.ends_with("_clean.sng")) ++clean;
    else if (n.ends_with(".sng")) ++noisy;
  }
  CHECK(images == 100);
  CHECK(clean == 100);
  CHECK(noisy == 300);
}

TEST_CASE("manifest errors name the record and file") {
  testing::TempDir dir("manifest_err");
  const fs::path m = cmd_gen_data(tiny_data(dir.path, 3), quiet);
  const auto text = io::read_text(m);
  const auto lines = lines_of(text);

  fs::remove(dir.path / "sinograms" / "phantom_00001_medium.sng");
  const std::string missing = error_text<IoError>([&] { load_manifest(m); });
  CHECK(missing.find("record 1") != std::string::npos);
  CHECK(missing.find("phantom_00001_medium.sng") != std::string::npos);
  CHECK(load_manifest(m, false).records.size() == 3);

  io::write_text(dir.path / "sinograms" / "phantom_00001_medium.sng", "junk");
  CHECK(error_text<FormatError>([&] { load_manifest(m); }).find("record 1") != std::string::npos);

  io::write_text(m, lines[0] + "\n" + lines[0] + "\n");
  CHECK(error_text<FormatError>([&] { load_manifest(m, false); }).find("duplicate") != std::string::npos);
  io::write_text(m, lines[0] + "\n{\"id\": 4}\n");
  CHECK(error_text<FormatError>([&] { load_manifest(m, false); }).find("record 1") != std::string::npos);
  io::write_text(m, "not json\n");
  CHECK_THROWS_AS(load_manifest(m, false), FormatError);
  CHECK_THROWS_AS(load_manifest(dir / "absent.jsonl"), IoError);
}

TEST_CASE("manifest serialization round-trips") {
  ManifestRecord r;
  r.id = 3;
  r.seed = 1234567890123ULL;
  r.image = "images/x.img";
  r.clean = "sinograms/x_clean.sng";
  r.levels = {{"low", 200}, {"odd", 0.3}};
  r.noisy = {"sinograms/x_low.sng", "sinograms/x_odd.sng"};
  testing::TempDir dir("manifest_rt");
  io::write_text(dir / "manifest.jsonl", serialize_manifest({r, ManifestRecord{r}}));
  CHECK_THROWS_AS(load_manifest(dir / "manifest.jsonl", false), FormatError);
  ManifestRecord r2 = r;
  r2.id = 4;
  io::write_text(dir / "manifest.jsonl", serialize_manifest({r, r2}));
  const auto m = load_manifest(dir / "manifest.jsonl", false);
  REQUIRE(m.records.size() == 2);
  CHECK(m.records[0] == r);
  CHECK(m.records[1] == r2);
  CHECK(m.directory == dir.path);
}

TEST_CASE("train writes checkpoints and traces and resumes exactly") {
  testing::TempDir dir("train_cmd");
  const fs::path m = cmd_gen_data(tiny_data(dir / "data"), quiet);

  TrainOptions t;
  t.manifest = m;
  t.config = tiny_train(0);
  t.out_dir = dir / "zero";
  const fs::path ck0 = cmd_train(t, quiet);
  const GanModel init = from_checkpoint(load_checkpoint(ck0));
  CHECK(init.epochs_completed == 0);
  CHECK(init.steps == 0);
  CHECK(encode_checkpoint(to_checkpoint(init)) == encode_checkpoint(to_checkpoint(init_model(t.config, 16, 16))));
  CHECK(io::read_text(dir / "zero" / kLossTraceFile) == "step,loss_d,loss_g_adv,loss_g_l1\n");

  t.config = tiny_train(3);
  t.out_dir = dir / "full";
  cmd_train(t, quiet);
  const auto trace = lines_of(io::read_text(dir / "full" / kLossTraceFile));
  // 6 phantoms, batch 4 -> 2 steps per epoch.
  REQUIRE(trace.size() == 1 + 6);
  CHECK(trace.back().starts_with("6,"));

  t.out_dir = dir / "split";
  t.stop_after_epochs = 1;
  cmd_train(t, quiet);
  CHECK(from_checkpoint(load_checkpoint(dir / "split" / kCheckpointFile)).epochs_completed == 1);
  CHECK_THROWS_AS(cmd_train(t, quiet), IoError);
  t.resume = true;
  t.stop_after_epochs = 0;
  cmd_train(t, quiet);
  CHECK(io::read_file(dir / "split" / kCheckpointFile) == io::read_file(dir / "full" / kCheckpointFile));
  CHECK(io::read_text(dir / "split" / kLossTraceFile) == io::read_text(dir / "full" / kLossTraceFile));

  t.config.learning_rate = 1e-3;
  CHECK_THROWS_AS(cmd_train(t, quiet), ConfigError);

  t = TrainOptions{};
  t.manifest = dir / "nowhere" / "manifest.jsonl";
  t.config = tiny_train(1);
  t.out_dir = dir / "missing";
  CHECK(error_text<IoError>([&] { cmd_train(t, quiet); }).find("nowhere") != std::string::npos);

  const auto lines = lines_of(io::read_text(m));
  io::write_text(dir / "data" / "corrupt.jsonl", lines[0] + "\n" + lines[1] + "\n{\"id\": 9, \"seed\": 1}\n");
  t.manifest = dir / "data" / "corrupt.jsonl";
  t.out_dir = dir / "corrupt";
  CHECK(error_text<FormatError>([&] { cmd_train(t, quiet); }).find("record 2") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "corrupt" / kCheckpointFile));

  const fs::path empty = cmd_gen_data(tiny_data(dir / "empty", 0), quiet);
  t.manifest = empty;
  CHECK_THROWS_AS(cmd_train(t, quiet), ConfigError);
}

TEST_CASE("denoise, reconstruct and evaluate commands") {
  testing::TempDir dir("cmds");
  const fs::path m = cmd_gen_data(tiny_data(dir / "data", 4), quiet);
  TrainOptions t;
  t.manifest = m;
  t.config = tiny_train(1);
  t.out_dir = dir / "train";
  const fs::path ck = cmd_train(t, quiet);
  const auto rec = load_manifest(m).records[0];

  const fs::path noisy = dir / "data" / rec.noisy[1];
  cmd_denoise(ck, noisy, dir / "out" / "d1.sng");
  const Sinogram d1 = io::read_sinogram(dir / "out" / "d1.sng");
  CHECK(d1.views == 16);
  CHECK(d1.bins == 16);
  CHECK(d1.counts_scale == 50.0);
  for (double v : d1.values) CHECK(v >= 0.0);
  cmd_denoise(ck, dir / "out" / "d1.sng", dir / "out" / "d2.sng");
  CHECK(io::read_sinogram(dir / "out" / "d2.sng").values.size() == d1.values.size());
  CHECK_THROWS_AS(cmd_denoise(ck, dir / "data" / rec.image, dir / "out" / "x.sng"), FormatError);

  io::write_sinogram(dir / "zero.sng", Sinogram(16, 16));
  ReconstructOptions r;
  r.input = dir / "zero.sng";
  r.output = dir / "out" / "zero.img";
  r.subsets = 2;
  r.iterations = 3;
  const Image z = cmd_reconstruct(r);
  CHECK(z.rows == 16);
  CHECK(z.max() <= 1e-6);

  r.input = dir / "data" / rec.clean;
  r.output = dir / "out" / "clean.img";
  r.png = true;
  const Image c1 = cmd_reconstruct(r);
  CHECK(fs::exists(dir / "out" / "clean.png"));
  CHECK(io::read_image(r.output) == c1);
  r.output = dir / "out" / "clean2.img";
  r.png = false;
  CHECK(cmd_reconstruct(r) == c1);
  r.subsets = 3;
  CHECK(error_text<ConfigError>([&] { cmd_reconstruct(r); }).find("divisible") != std::string::npos);

  EvaluateOptions e;
  e.test = dir / "data" / rec.clean;
  e.reference = dir / "data" / rec.clean;
  e.report = dir / "out" / "report.csv";
  const MetricsReport same = cmd_evaluate(e);
  CHECK(same.mse == 0.0);
  CHECK(same.ssim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::isinf(same.psnr_db));
  e.test = noisy;
  e.label = "noisy";
  const MetricsReport nr = cmd_evaluate(e);
  CHECK(nr.mse > 0.0);
  CHECK(nr.label == "noisy");
  CHECK(lines_of(io::read_text(e.report)).size() == 3);
  e.overwrite = true;
  cmd_evaluate(e);
  CHECK(lines_of(io::read_text(e.report)).size() == 2);

  e.test = dir / "out" / "clean.img";
  CHECK_THROWS_AS(cmd_evaluate(e), FormatError);
  e.reference = dir / "data" / rec.image;
  e.report.clear();
  const MetricsReport img = cmd_evaluate(e);
  CHECK(img.ssim > 0.0);
  CHECK(img.ssim < 1.0);
}

TEST_CASE("reconstruction table from six evaluate calls") {
  testing::TempDir dir("table_six");
  const Image phantom = shepp_logan(16);
  io::write_image(dir / "phantom.img", phantom);
  const Sinogram clean = forward_project(phantom, Geometry{16, 16, 16});
  save_checkpoint(dir / "g.ckpt", to_checkpoint(init_model(tiny_train(0), 16, 16)));
  std::size_t l = 0;
  for (const auto& level : default_noise_presets()) {
    io::write_sinogram(dir / "n.sng", add_poisson_noise(clean, level.counts_scale, noise_seed(77, l++)));
    cmd_denoise(dir / "g.ckpt", dir / "n.sng", dir / "d.sng");
    for (const char* method : {"standard", "proposed"}) {
      ReconstructOptions r;
      r.input = std::string(method) == "standard" ? dir / "n.sng" : dir / "d.sng";
      r.output = dir / (level.name + "_" + method + ".img");
      r.subsets = 2;
      r.iterations = 4;
      cmd_reconstruct(r);
      EvaluateOptions e;
      e.test = r.output;
      e.reference = dir / "phantom.img";
      e.data_range = 1.0;
      e.report = dir / "table.csv";
      e.label = level.name + "/" + method;
      cmd_evaluate(e);
    }
  }
  const auto rows = lines_of(io::read_text(dir / "table.csv"));
  CHECK(rows.size() == 7);
  CHECK(rows[1].find("low/standard") != std::string::npos);
  CHECK(rows[6].find("high/proposed") != std::string::npos);
}

TEST_CASE("reproduce runs end to end and is deterministic") {
  testing::TempDir a("repro_a"), b("repro_b");
  const ExperimentConfig c = tiny_experiment();
  const ReproduceResult ra = cmd_reproduce(c, a.path, false, quiet);
  cmd_reproduce(c, b.path, false, quiet);

  REQUIRE(ra.sinogram_table.size() == 6);
  REQUIRE(ra.reconstruction_table.size() == 6);
  REQUIRE(ra.heldout.size() == 3);
  CHECK(ra.heldout[1].noise_level == "medium");
  CHECK(ra.heldout[1].cases == 3);
  CHECK(ra.sinogram_table[0].method == "noisy");
  CHECK(ra.sinogram_table[1].method == "denoised");
  CHECK(ra.reconstruction_table[0].method == "standard");
  CHECK(ra.reconstruction_table[1].method == "proposed");

  for (const char* t : {"sinogram_denoising.csv", "osem_reconstruction.csv", "heldout_cases.csv"}) {
    const auto rows = lines_of(io::read_text(a.path / "tables" / t));
    CHECK(rows[0] == "noise_level,method,mape_pct,mse,ssim,psnr_db");
  }
  CHECK(lines_of(io::read_text(a.path / "tables" / "osem_reconstruction.csv")).size() == 7);
  CHECK(lines_of(io::read_text(a.path / "tables" / "heldout_summary.csv")).size() == 4);
  CHECK(parse_experiment_config(io::read_text(a.path / "experiment.cfg")) == c);

  auto sa = snapshot(a.path), sb = snapshot(b.path);
  CHECK(sa.size() == sb.size());
  for (const auto& [name, bytes] : sa) {
    INFO(name);
    CHECK(sb.count(name) == 1);
    CHECK(sb[name] == bytes);
  }

  std::size_t parsed = 0;
  for (const auto& [name, bytes] : sa) {
    INFO(name);
    if (name.ends_with(".img")) CHECK_NOTHROW(io::decode_image(bytes));
    else if (name.ends_with(".sng")) CHECK_NOTHROW(io::decode_sinogram(bytes));
    else if (name.ends_with(".ckpt")) CHECK_NOTHROW(from_checkpoint(decode_checkpoint(bytes)));
    else continue;
    ++parsed;
  }
  CHECK(parsed > 40);

  // Second run reuses the data and finished checkpoint.
  const auto before = io::read_file(a.path / "train" / kCheckpointFile);
  cmd_reproduce(c, a.path, false, quiet);
  CHECK(io::read_file(a.path / "train" / kCheckpointFile) == before);

  ExperimentConfig from_ckpt = c;
  from_ckpt.checkpoint = (a.path / "train" / kCheckpointFile).string();
  from_ckpt.shepp_logan = false;
  testing::TempDir d("repro_ckpt");
  const ReproduceResult rc = cmd_reproduce(from_ckpt, d.path, false, quiet);
  CHECK(rc.sinogram_table.empty());
  CHECK_FALSE(fs::exists(d.path / "data"));
  REQUIRE(rc.heldout.size() == 3);
  CHECK(rc.heldout[2].mean_ssim_proposed == ra.heldout[2].mean_ssim_proposed);
}

TEST_CASE("reproduce failures name the stage") {
  testing::TempDir dir("repro_fail");
  ExperimentConfig c = tiny_experiment();
  c.checkpoint = (dir / "missing.ckpt").string();
  try {
    cmd_reproduce(c, dir.path, false, quiet);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "load-checkpoint");
    CHECK(std::string(e.what()).find(dir.path.string()) != std::string::npos);
  }

  c = tiny_experiment();
  c.num_views = 12;
  try {
    cmd_reproduce(c, dir / "x", false, quiet);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "config");
  }

  c = tiny_experiment();
  cmd_gen_data(tiny_data(dir / "y" / "data", 3), quiet);
  try {
    cmd_reproduce(c, dir / "y", false, quiet);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "data");
  }
}
