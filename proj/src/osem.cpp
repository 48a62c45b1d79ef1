#include "sinogan/osem.hpp"

#include <algorithm>
#include <cmath>

#include "sinogan/errors.hpp"

namespace sinogan {

void OsemConfig::validate(const Geometry& geometry) const {
  if (num_subsets == 0) throw ConfigError("osem: num_subsets must be positive");
  if (geometry.num_views % num_subsets != 0) {
    throw ConfigError("osem: num_views (" + std::to_string(geometry.num_views) +
                      ") must be divisible by num_subsets (" + std::to_string(num_subsets) + ")");
  }
  if (!(init_value > 0.0)) throw ConfigError("osem: init_value must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("osem: epsilon must be positive");
}

std::vector<std::vector<std::size_t>> interleaved_subsets(std::size_t num_views, std::size_t num_subsets) {
  if (num_subsets == 0) throw ConfigError("osem: num_subsets must be positive");
  std::vector<std::vector<std::size_t>> subsets(num_subsets);
  for (std::size_t v = 0; v < num_views; ++v) subsets[v % num_subsets].push_back(v);
  return subsets;
}

OsemReconstructor::OsemReconstructor(Geometry geometry, OsemConfig config)
    : geometry_(geometry), config_(config) {
  geometry_.validate();
  config_.validate(geometry_);
  subsets_ = interleaved_subsets(geometry_.num_views, config_.num_subsets);
  const Sinogram ones(geometry_.num_views, geometry_.num_bins, 1.0);
  for (const auto& views : subsets_) {
    Image s = Image::square(geometry_.image_size);
    back_project_views(ones, geometry_, views, s);
    sensitivity_.push_back(std::move(s));
  }
}

Image OsemReconstructor::reconstruct(const Sinogram& sinogram, const IterationCallback& on_pass) const {
  return reconstruct_from(sinogram, Image::square(geometry_.image_size, config_.init_value), on_pass);
}

Image OsemReconstructor::reconstruct_from(const Sinogram& sinogram, Image x, const IterationCallback& on_pass) const {
  if (sinogram.views != geometry_.num_views || sinogram.bins != geometry_.num_bins) {
    throw DimensionError("osem: sinogram shape does not match geometry");
  }
  if (x.rows != geometry_.image_size || x.cols != geometry_.image_size) {
    throw DimensionError("osem: initial image shape does not match geometry");
  }
  for (double v : sinogram.values) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("osem: sinogram must be finite and non-negative");
  }
  const double eps = config_.epsilon;
  Sinogram estimate(geometry_.num_views, geometry_.num_bins);
  Sinogram ratio(geometry_.num_views, geometry_.num_bins);
  Image correction = Image::square(geometry_.image_size);
  for (std::size_t pass = 1; pass <= config_.num_iterations; ++pass) {
    for (std::size_t s = 0; s < subsets_.size(); ++s) {
      const auto& views = subsets_[s];
      forward_project_views(x, geometry_, views, estimate);
      for (std::size_t v : views) {
        for (std::size_t b = 0; b < geometry_.num_bins; ++b) {
          ratio.at(v, b) = sinogram.at(v, b) / (estimate.at(v, b) + eps);
        }
      }
      std::fill(correction.values.begin(), correction.values.end(), 0.0);
      back_project_views(ratio, geometry_, views, correction);
      const auto& sens = sensitivity_[s].values;
      for (std::size_t i = 0; i < x.values.size(); ++i) {
        x.values[i] *= correction.values[i] / (sens[i] + eps);
      }
    }
    if (on_pass) on_pass(pass, x);
  }
  return x;
}

Image osem_reconstruct(const Sinogram& sinogram, const Geometry& geometry, const OsemConfig& config,
                       const IterationCallback& on_pass) {
  return OsemReconstructor(geometry, config).reconstruct(sinogram, on_pass);
}

double poisson_log_likelihood(const Sinogram& sinogram, const Image& image, const Geometry& geometry,
                              double epsilon) {
  const Sinogram ax = forward_project(image, geometry);
  if (sinogram.values.size() != ax.values.size()) throw DimensionError("log-likelihood: sinogram shape mismatch");
  double ll = 0.0;
  for (std::size_t i = 0; i < ax.values.size(); ++i) {
    ll += sinogram.values[i] * std::log(ax.values[i] + epsilon) - ax.values[i];
  }
  return ll;
}

}  // namespace sinogan
