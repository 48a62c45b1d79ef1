#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sinogan/image.hpp"

namespace sinogan {

// Reference bins with |value| below this are left out of MAPE.
inline constexpr double kMapeZeroThreshold = 1e-8;

struct MapeResult {
  double percent = 0.0;
  std::size_t included = 0;
};

double mse(std::span<const double> test, std::span<const double> reference);
MapeResult mape_detail(std::span<const double> test, std::span<const double> reference);
double mape(std::span<const double> test, std::span<const double> reference);
// +infinity when mse == 0.
double psnr_from_mse(double mse_value, double data_range);
double psnr(std::span<const double> test, std::span<const double> reference, double data_range);

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

// Mean of the local SSIM map over all fully contained Gaussian windows.
double ssim(std::span<const double> a, std::span<const double> b, std::size_t rows, std::size_t cols,
            double data_range, const SsimParams& params = {});

struct MetricsReport {
  std::string label;
  double mape_pct = 0.0;
  std::size_t mape_count = 0;
  double mse = 0.0;
  double ssim = 1.0;
  double psnr_db = 0.0;
  double data_range = 1.0;
};

// data_range defaults to the reference maximum.
MetricsReport evaluate_pair(std::span<const double> test, std::span<const double> reference, std::size_t rows,
                            std::size_t cols, std::optional<double> data_range = std::nullopt,
                            std::string label = {});
MetricsReport evaluate_pair(const Image& test, const Image& reference, std::optional<double> data_range = std::nullopt,
                            std::string label = {});
MetricsReport evaluate_pair(const Sinogram& test, const Sinogram& reference,
                            std::optional<double> data_range = std::nullopt, std::string label = {});

std::string report_csv_header();
std::string report_csv_row(const MetricsReport& report);
std::string reports_to_json(const std::vector<MetricsReport>& reports);

// Appends to a CSV (header written once) or JSON array file chosen by extension;
// `overwrite` starts the file afresh.
void append_report(const std::filesystem::path& path, const MetricsReport& report, bool overwrite = false);

}  // namespace sinogan
