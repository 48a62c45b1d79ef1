#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sinogan/errors.hpp"
#include "sinogan/gan.hpp"
#include "sinogan/io.hpp"
#include "sinogan/metrics.hpp"
#include "sinogan/osem.hpp"
#include "sinogan/phantom.hpp"
#include "sinogan/pipeline.hpp"
#include "sinogan/projector.hpp"

namespace py = pybind11;
using namespace sinogan;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const std::vector<double>& values, std::size_t rows, std::size_t cols) {
  Array out({rows, cols});
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

std::vector<double> flat(const Array& a, std::size_t& rows, std::size_t& cols) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  rows = static_cast<std::size_t>(a.shape(0));
  cols = static_cast<std::size_t>(a.shape(1));
  return {a.data(), a.data() + a.size()};
}

Image to_image(const Array& a) {
  Image im;
  im.values = flat(a, im.rows, im.cols);
  return im;
}

Sinogram to_sinogram(const Array& a, double counts_scale = 0.0) {
  Sinogram s;
  s.values = flat(a, s.views, s.bins);
  s.counts_scale = counts_scale;
  return s;
}

std::span<const double> view(const Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

template <class F>
auto without_gil(F&& f) {
  py::gil_scoped_release release;
  return f();
}

Array from(const Image& im) { return to_array(im.values, im.rows, im.cols); }
Array from(const Sinogram& s) { return to_array(s.values, s.views, s.bins); }

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["label"] = r.label;
  d["mape_pct"] = r.mape_pct;
  d["mape_count"] = r.mape_count;
  d["mse"] = r.mse;
  d["ssim"] = r.ssim;
  d["psnr_db"] = r.psnr_db;
  d["data_range"] = r.data_range;
  return d;
}

py::dict heldout_dict(const pipeline::HeldoutSummary& h) {
  py::dict d;
  d["noise_level"] = h.noise_level;
  d["cases"] = h.cases;
  d["mean_mse_noisy"] = h.mean_mse_noisy;
  d["mean_mse_denoised"] = h.mean_mse_denoised;
  d["fraction_improved"] = h.fraction_improved;
  d["mean_ssim_standard"] = h.mean_ssim_standard;
  d["mean_ssim_proposed"] = h.mean_ssim_proposed;
  d["mean_psnr_standard"] = h.mean_psnr_standard;
  d["mean_psnr_proposed"] = h.mean_psnr_proposed;
  return d;
}

py::list table_rows(const std::vector<pipeline::TableRow>& rows) {
  py::list out;
  for (const auto& r : rows) {
    py::dict d = report_dict(r.metrics);
    d["noise_level"] = r.noise_level;
    d["method"] = r.method;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sinogram denoising with a conditional GAN, plus projector, OSEM and metrics.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<pipeline::StageError>(m, "StageError", PyExc_RuntimeError);
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);

  m.def(
      "shepp_logan",
      [](std::size_t size, bool original) {
        return from(shepp_logan(size, original ? SheppLoganVariant::Original : SheppLoganVariant::Modified));
      },
      py::arg("size") = 128, py::arg("original") = false);
  m.def(
      "random_phantom",
      [](std::uint64_t seed, std::size_t size) {
        PhantomConfig pc;
        pc.seed = seed;
        pc.size = size;
        return from(generate_random_phantom(pc));
      },
      py::arg("seed"), py::arg("size") = 128);

  m.def(
      "forward_project",
      [](const Array& image, std::size_t views, std::size_t bins) {
        const Image im = to_image(image);
        if (im.rows != im.cols) throw DimensionError("image must be square");
        const Geometry g{views, bins ? bins : im.rows, im.rows};
        return from(without_gil([&] { return forward_project(im, g); }));
      },
      py::arg("image"), py::arg("views") = 32, py::arg("bins") = 0);
  m.def(
      "back_project",
      [](const Array& sinogram, std::size_t image_size) {
        const Sinogram s = to_sinogram(sinogram);
        const Geometry g{s.views, s.bins, image_size ? image_size : s.bins};
        return from(without_gil([&] { return back_project(s, g); }));
      },
      py::arg("sinogram"), py::arg("image_size") = 0);
  m.def(
      "add_poisson_noise",
      [](const Array& sinogram, double counts_scale, std::uint64_t seed) {
        return from(add_poisson_noise(to_sinogram(sinogram), counts_scale, seed));
      },
      py::arg("sinogram"), py::arg("counts_scale"), py::arg("seed"));
  m.def(
      "osem",
      [](const Array& sinogram, std::size_t subsets, std::size_t iterations, std::size_t image_size) {
        const Sinogram s = to_sinogram(sinogram);
        OsemConfig c;
        c.num_subsets = subsets;
        c.num_iterations = iterations;
        const Geometry g{s.views, s.bins, image_size ? image_size : s.bins};
        return from(without_gil([&] { return osem_reconstruct(s, g, c); }));
      },
      py::arg("sinogram"), py::arg("subsets") = 4, py::arg("iterations") = 10, py::arg("image_size") = 0);

  m.def("mse", [](const Array& a, const Array& b) { return mse(view(a), view(b)); }, py::arg("test"),
        py::arg("reference"));
  m.def("mape", [](const Array& a, const Array& b) { return mape(view(a), view(b)); }, py::arg("test"),
        py::arg("reference"));
  m.def("psnr", [](const Array& a, const Array& b, double range) { return psnr(view(a), view(b), range); },
        py::arg("test"), py::arg("reference"), py::arg("data_range"));
  m.def("psnr_from_mse", &psnr_from_mse, py::arg("mse"), py::arg("data_range"));
  m.def(
      "ssim",
      [](const Array& a, const Array& b, double range) {
        std::size_t r1, c1, r2, c2;
        const auto x = flat(a, r1, c1);
        const auto y = flat(b, r2, c2);
        if (r1 != r2 || c1 != c2) throw DimensionError("ssim: shapes differ");
        return ssim(x, y, r1, c1, range);
      },
      py::arg("test"), py::arg("reference"), py::arg("data_range"));
  m.def(
      "evaluate",
      [](const Array& test, const Array& reference, std::optional<double> range, const std::string& label) {
        std::size_t r1, c1, r2, c2;
        const auto x = flat(test, r1, c1);
        const auto y = flat(reference, r2, c2);
        if (r1 != r2 || c1 != c2) throw DimensionError("evaluate: shapes differ");
        return report_dict(evaluate_pair(x, y, r1, c1, range, label));
      },
      py::arg("test"), py::arg("reference"), py::arg("data_range") = py::none(), py::arg("label") = "");

  m.def("read_image", [](const std::filesystem::path& p) { return from(io::read_image(p)); }, py::arg("path"));
  m.def("write_image", [](const std::filesystem::path& p, const Array& a) { io::write_image(p, to_image(a)); },
        py::arg("path"), py::arg("image"));
  m.def(
      "read_sinogram",
      [](const std::filesystem::path& p) {
        const Sinogram s = io::read_sinogram(p);
        return py::make_tuple(from(s), s.counts_scale);
      },
      py::arg("path"), "Returns (values, counts_scale).");
  m.def(
      "write_sinogram",
      [](const std::filesystem::path& p, const Array& a, double counts_scale) {
        io::write_sinogram(p, to_sinogram(a, counts_scale));
      },
      py::arg("path"), py::arg("sinogram"), py::arg("counts_scale") = 0.0);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init([](std::size_t epochs, std::size_t batch_size, double learning_rate, double beta1, double beta2,
                       double lambda_l1, double channel_scale, std::uint64_t seed) {
             return TrainConfig{epochs, batch_size, learning_rate, beta1, beta2, lambda_l1, channel_scale, seed};
           }),
           py::arg("epochs") = 20, py::arg("batch_size") = 16, py::arg("learning_rate") = 2e-4,
           py::arg("beta1") = 0.5, py::arg("beta2") = 0.999, py::arg("lambda_l1") = 100.0,
           py::arg("channel_scale") = 1.0, py::arg("seed") = 0)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("beta1", &TrainConfig::beta1)
      .def_readwrite("beta2", &TrainConfig::beta2)
      .def_readwrite("lambda_l1", &TrainConfig::lambda_l1)
      .def_readwrite("channel_scale", &TrainConfig::channel_scale)
      .def_readwrite("seed", &TrainConfig::seed)
      .def("__eq__", [](const TrainConfig& a, const TrainConfig& b) { return a == b; });

  py::class_<GanModel>(m, "GanModel")
      .def(py::init([](const TrainConfig& c, std::size_t views, std::size_t bins) { return init_model(c, views, bins); }),
           py::arg("config"), py::arg("views") = 32, py::arg("bins") = 128)
      .def_static(
          "load", [](const std::filesystem::path& p) { return from_checkpoint(load_checkpoint(p)); }, py::arg("path"))
      .def(
          "save", [](const GanModel& g, const std::filesystem::path& p) { save_checkpoint(p, to_checkpoint(g)); },
          py::arg("path"))
      .def_readonly("config", &GanModel::config)
      .def_readonly("views", &GanModel::views)
      .def_readonly("bins", &GanModel::bins)
      .def_readonly("epochs_completed", &GanModel::epochs_completed)
      .def_readonly("steps", &GanModel::steps)
      .def_property_readonly("generator_parameters", [](const GanModel& g) { return parameter_count(g.generator); })
      .def_property_readonly("discriminator_parameters",
                             [](const GanModel& g) { return parameter_count(g.discriminator); })
      .def(
          "denoise",
          [](const GanModel& g, const Array& noisy) {
            const Sinogram s = to_sinogram(noisy);
            return from(without_gil([&] { return denoise(g, s); }));
          },
          py::arg("noisy"))
      .def(
          "train",
          [](GanModel& g, const std::vector<Array>& clean, const std::vector<std::vector<Array>>& noisy,
             std::size_t epochs, const py::object& on_step) {
            if (clean.size() != noisy.size()) throw DimensionError("train: clean and noisy lists differ in length");
            std::vector<TrainingSample> data;
            for (std::size_t i = 0; i < clean.size(); ++i) {
              TrainingSample s{to_sinogram(clean[i]), {}};
              for (const auto& n : noisy[i]) s.noisy.push_back(to_sinogram(n));
              data.push_back(std::move(s));
            }
            if (epochs) g.config.epochs = g.epochs_completed + epochs;
            std::vector<LossRecord> records;
            TrainHooks hooks;
            hooks.on_step = [&](const LossRecord& r) {
              records.push_back(r);
              if (!on_step.is_none()) on_step(r.step, r.loss_d, r.loss_g_adv, r.loss_g_l1);
            };
            train(g, data, hooks);
            py::list out;
            for (const auto& r : records) out.append(py::make_tuple(r.step, r.loss_d, r.loss_g_adv, r.loss_g_l1));
            return out;
          },
          py::arg("clean"), py::arg("noisy"), py::arg("epochs") = 0, py::arg("on_step") = py::none(),
          "Trains on lists of clean sinograms and their noisy realisations. Returns (step, loss_d, loss_g_adv, "
          "loss_g_l1) tuples.");

  m.def(
      "gen_data",
      [](const std::filesystem::path& out, std::size_t count, std::size_t size, std::size_t views, std::size_t bins,
         const std::string& noise, std::uint64_t seed, bool overwrite) {
        pipeline::GenDataOptions o;
        o.out_dir = out;
        o.count = count;
        o.image_size = size;
        o.num_views = views;
        o.num_bins = bins;
        o.noise = pipeline::parse_noise_presets(noise);
        o.seed = seed;
        o.overwrite = overwrite;
        return pipeline::cmd_gen_data(o, pipeline::Log{true});
      },
      py::arg("out"), py::arg("count") = 5000, py::arg("size") = 128, py::arg("views") = 32, py::arg("bins") = 128,
      py::arg("noise") = "low:200,medium:50,high:10", py::arg("seed") = 7, py::arg("overwrite") = false,
      "Writes a dataset and returns the manifest path.");

  m.def(
      "reproduce",
      [](const std::string& config_text, const std::filesystem::path& out, bool overwrite, bool quiet) {
        const auto cfg = pipeline::parse_experiment_config(config_text);
        const auto r = pipeline::cmd_reproduce(cfg, out, overwrite, pipeline::Log{quiet});
        py::dict d;
        d["sinogram_table"] = table_rows(r.sinogram_table);
        d["reconstruction_table"] = table_rows(r.reconstruction_table);
        py::list held;
        for (const auto& h : r.heldout) held.append(heldout_dict(h));
        d["heldout"] = held;
        d["checkpoint"] = r.checkpoint;
        return d;
      },
      py::arg("config_text"), py::arg("out"), py::arg("overwrite") = false, py::arg("quiet") = true,
      "Runs the full pipeline from config text (`key = value` lines).");
  m.def(
      "default_config", [] { return pipeline::serialize_experiment_config(pipeline::ExperimentConfig{}); },
      "Default experiment config as text.");
}
