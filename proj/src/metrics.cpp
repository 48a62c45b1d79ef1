#include "sinogan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include "json.hpp"

#include "sinogan/errors.hpp"
#include "sinogan/io.hpp"

namespace sinogan {

namespace {

void require_same_size(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": size mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
}

std::vector<double> gaussian_window(std::size_t n, double sigma) {
  std::vector<double> w(n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - c;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

// Valid-mode separable filtering of a rows x cols plane.
std::vector<double> filter_valid(std::span<const double> x, std::size_t rows, std::size_t cols,
                                 const std::vector<double>& w) {
  const std::size_t n = w.size();
  const std::size_t orows = rows - n + 1, ocols = cols - n + 1;
  std::vector<double> tmp(rows * ocols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ocols; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += w[k] * x[r * cols + c + k];
      tmp[r * ocols + c] = acc;
    }
  }
  std::vector<double> out(orows * ocols);
  for (std::size_t r = 0; r < orows; ++r) {
    for (std::size_t c = 0; c < ocols; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += w[k] * tmp[(r + k) * ocols + c];
      out[r * ocols + c] = acc;
    }
  }
  return out;
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

nlohmann::json report_json(const MetricsReport& r) {
  nlohmann::json j;
  j["label"] = r.label;
  j["mape_pct"] = r.mape_pct;
  j["mape_count"] = r.mape_count;
  j["mse"] = r.mse;
  j["ssim"] = r.ssim;
  if (std::isinf(r.psnr_db)) {
    j["psnr_db"] = "inf";
  } else {
    j["psnr_db"] = r.psnr_db;
  }
  j["data_range"] = r.data_range;
  return j;
}

}  // namespace

double mse(std::span<const double> test, std::span<const double> reference) {
  require_same_size(test, reference, "mse");
  if (test.empty()) throw DimensionError("mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const double d = test[i] - reference[i];
    s += d * d;
  }
  return s / static_cast<double>(test.size());
}

MapeResult mape_detail(std::span<const double> test, std::span<const double> reference) {
  require_same_size(test, reference, "mape");
  MapeResult r;
  double s = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (std::abs(reference[i]) < kMapeZeroThreshold) continue;
    s += std::abs(test[i] - reference[i]) / std::abs(reference[i]);
    ++r.included;
  }
  if (r.included == 0) throw UndefinedMetricError("mape: reference has no non-zero entries");
  r.percent = 100.0 * s / static_cast<double>(r.included);
  return r;
}

double mape(std::span<const double> test, std::span<const double> reference) {
  return mape_detail(test, reference).percent;
}

double psnr_from_mse(double mse_value, double data_range) {
  if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse_value);
}

double psnr(std::span<const double> test, std::span<const double> reference, double data_range) {
  return psnr_from_mse(mse(test, reference), data_range);
}

double ssim(std::span<const double> a, std::span<const double> b, std::size_t rows, std::size_t cols,
            double data_range, const SsimParams& params) {
  require_same_size(a, b, "ssim");
  if (a.size() != rows * cols) throw DimensionError("ssim: value count does not match dims");
  if (rows < params.window || cols < params.window) {
    throw DimensionError("ssim: image " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " smaller than the " + std::to_string(params.window) + "x" +
                         std::to_string(params.window) + " window");
  }
  if (!(data_range > 0.0)) throw UndefinedMetricError("ssim: data_range must be positive");
  const auto w = gaussian_window(params.window, params.sigma);
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, rows, cols, w);
  const auto mu_b = filter_valid(b, rows, cols, w);
  const auto e_aa = filter_valid(aa, rows, cols, w);
  const auto e_bb = filter_valid(bb, rows, cols, w);
  const auto e_ab = filter_valid(ab, rows, cols, w);
  const double c1 = (params.k1 * data_range) * (params.k1 * data_range);
  const double c2 = (params.k2 * data_range) * (params.k2 * data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

MetricsReport evaluate_pair(std::span<const double> test, std::span<const double> reference, std::size_t rows,
                            std::size_t cols, std::optional<double> data_range, std::string label) {
  require_same_size(test, reference, "evaluate_pair");
  MetricsReport r;
  r.label = std::move(label);
  r.data_range = data_range ? *data_range : *std::max_element(reference.begin(), reference.end());
  if (!(r.data_range > 0.0)) throw UndefinedMetricError("evaluate_pair: data_range must be positive");
  const MapeResult m = mape_detail(test, reference);
  r.mape_pct = m.percent;
  r.mape_count = m.included;
  r.mse = mse(test, reference);
  r.psnr_db = psnr_from_mse(r.mse, r.data_range);
  r.ssim = ssim(test, reference, rows, cols, r.data_range);
  return r;
}

MetricsReport evaluate_pair(const Image& test, const Image& reference, std::optional<double> data_range,
                            std::string label) {
  if (test.rows != reference.rows || test.cols != reference.cols) throw DimensionError("evaluate_pair: image dims differ");
  return evaluate_pair(test.values, reference.values, reference.rows, reference.cols, data_range, std::move(label));
}

MetricsReport evaluate_pair(const Sinogram& test, const Sinogram& reference, std::optional<double> data_range,
                            std::string label) {
  if (test.views != reference.views || test.bins != reference.bins) {
    throw DimensionError("evaluate_pair: sinogram dims differ");
  }
  return evaluate_pair(test.values, reference.values, reference.views, reference.bins, data_range, std::move(label));
}

std::string report_csv_header() { return "label,mape_pct,mape_count,mse,ssim,psnr_db,data_range"; }

std::string report_csv_row(const MetricsReport& r) {
  return csv_escape(r.label) + "," + format_double(r.mape_pct) + "," + std::to_string(r.mape_count) + "," +
         format_double(r.mse) + "," + format_double(r.ssim) + "," + format_double(r.psnr_db) + "," +
         format_double(r.data_range);
}

std::string reports_to_json(const std::vector<MetricsReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(report_json(r));
  return arr.dump(2) + "\n";
}

void append_report(const std::filesystem::path& path, const MetricsReport& report, bool overwrite) {
  const bool exists = std::filesystem::exists(path) && !overwrite;
  if (path.extension() == ".json") {
    nlohmann::json arr = nlohmann::json::array();
    if (exists) {
      try {
        arr = nlohmann::json::parse(io::read_text(path));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
      }
      if (!arr.is_array()) throw FormatError(path.string() + ": report file is not a JSON array");
    }
    arr.push_back(report_json(report));
    io::write_text(path, arr.dump(2) + "\n");
    return;
  }
  std::string text = exists ? io::read_text(path) : report_csv_header() + "\n";
  text += report_csv_row(report) + "\n";
  io::write_text(path, text);
}

}  // namespace sinogan
