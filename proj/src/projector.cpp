#include "sinogan/projector.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "sinogan/errors.hpp"
#include "sinogan/random.hpp"

namespace sinogan {

namespace {

// Visits the bilinear interpolation taps of every sample along ray (view, bin).
// fn(pixel_index, weight) is called once per in-bounds tap.
template <typename Fn>
void for_each_tap(const Geometry& g, std::size_t view, std::size_t bin, Fn&& fn) {
  const double theta = g.angle_rad(view);
  const double ct = std::cos(theta), st = std::sin(theta);
  const auto n = static_cast<long>(g.image_size);
  const double half_img = (static_cast<double>(g.image_size) - 1.0) / 2.0;
  const double s = static_cast<double>(bin) - (static_cast<double>(g.num_bins) - 1.0) / 2.0;
  const std::size_t k = g.samples_per_ray();
  const double t0 = -(static_cast<double>(k) - 1.0) / 2.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double t = t0 + static_cast<double>(j);
    // Point s*u + t*d with u = (cos, sin), d = (-sin, cos), y pointing up.
    const double px = s * ct - t * st;
    const double py = s * st + t * ct;
    const double cf = px + half_img;
    const double rf = half_img - py;
    const double c0f = std::floor(cf), r0f = std::floor(rf);
    const auto c0 = static_cast<long>(c0f), r0 = static_cast<long>(r0f);
    if (c0 < -1 || c0 >= n || r0 < -1 || r0 >= n) continue;
    const double fx = cf - c0f, fy = rf - r0f;
    const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const long rr[4] = {r0, r0, r0 + 1, r0 + 1};
    const long cc[4] = {c0, c0 + 1, c0, c0 + 1};
    for (int q = 0; q < 4; ++q) {
      if (rr[q] < 0 || rr[q] >= n || cc[q] < 0 || cc[q] >= n || w[q] == 0.0) continue;
      fn(static_cast<std::size_t>(rr[q] * n + cc[q]), w[q]);
    }
  }
}

void check_image(const Image& image, const Geometry& g) {
  if (image.rows != g.image_size || image.cols != g.image_size) {
    throw DimensionError("image " + std::to_string(image.rows) + "x" + std::to_string(image.cols) +
                         " does not match geometry size " + std::to_string(g.image_size));
  }
}

void check_sinogram(const Sinogram& s, const Geometry& g) {
  if (s.views != g.num_views || s.bins != g.num_bins || s.values.size() != s.views * s.bins) {
    throw DimensionError("sinogram " + std::to_string(s.views) + "x" + std::to_string(s.bins) +
                         " does not match geometry " + std::to_string(g.num_views) + "x" + std::to_string(g.num_bins));
  }
}

std::vector<std::size_t> all_views(const Geometry& g) {
  std::vector<std::size_t> v(g.num_views);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

void Geometry::validate() const {
  if (num_views < 1 || num_bins < 1 || image_size < 1) throw ConfigError("geometry dimensions must be positive");
}

double Geometry::angle_rad(std::size_t view) const {
  return 2.0 * std::numbers::pi * static_cast<double>(view) / static_cast<double>(num_views);
}

std::size_t Geometry::samples_per_ray() const {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(image_size) * std::numbers::sqrt2)) + 1;
}

void forward_project_views(const Image& image, const Geometry& geometry, std::span<const std::size_t> views,
                           Sinogram& out) {
  geometry.validate();
  check_image(image, geometry);
  check_sinogram(out, geometry);
  const double* f = image.values.data();
  for (std::size_t v : views) {
    if (v >= geometry.num_views) throw DimensionError("view index out of range");
    for (std::size_t b = 0; b < geometry.num_bins; ++b) {
      double acc = 0.0;
      for_each_tap(geometry, v, b, [&](std::size_t p, double w) { acc += w * f[p]; });
      out.at(v, b) = acc;
    }
  }
}

void back_project_views(const Sinogram& sinogram, const Geometry& geometry, std::span<const std::size_t> views,
                        Image& out) {
  geometry.validate();
  check_sinogram(sinogram, geometry);
  check_image(out, geometry);
  double* f = out.values.data();
  for (std::size_t v : views) {
    if (v >= geometry.num_views) throw DimensionError("view index out of range");
    for (std::size_t b = 0; b < geometry.num_bins; ++b) {
      const double y = sinogram.at(v, b);
      if (y == 0.0) continue;
      for_each_tap(geometry, v, b, [&](std::size_t p, double w) { f[p] += w * y; });
    }
  }
}

Sinogram forward_project(const Image& image, const Geometry& geometry) {
  Sinogram out(geometry.num_views, geometry.num_bins);
  const auto views = all_views(geometry);
  forward_project_views(image, geometry, views, out);
  return out;
}

Image back_project(const Sinogram& sinogram, const Geometry& geometry) {
  Image out = Image::square(geometry.image_size);
  const auto views = all_views(geometry);
  back_project_views(sinogram, geometry, views, out);
  return out;
}

Sinogram add_poisson_noise(const Sinogram& sinogram, double counts_scale, std::uint64_t seed) {
  if (!(counts_scale > 0.0) || !std::isfinite(counts_scale)) {
    throw ConfigError("add_poisson_noise: counts_scale must be positive");
  }
  Sinogram out = sinogram;
  out.counts_scale = counts_scale;
  const double peak = sinogram.max();
  if (peak <= 0.0) {
    for (double& v : out.values) v = 0.0;
    return out;
  }
  const double to_counts = counts_scale / peak;
  CounterRng rng(seed, /*stream=*/0x50);
  for (double& v : out.values) {
    if (v < 0.0) throw ContractError("add_poisson_noise: negative sinogram value");
    v = static_cast<double>(rng.poisson(v * to_counts)) / to_counts;
  }
  return out;
}

}  // namespace sinogan
