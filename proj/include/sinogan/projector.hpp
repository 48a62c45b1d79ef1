#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sinogan/image.hpp"

namespace sinogan {

// Parallel-beam geometry. View k sits at angle k * 360/num_views degrees;
// detector bins are one pixel wide and centred on the rotation axis.
struct Geometry {
  std::size_t num_views = 32;
  std::size_t num_bins = 128;
  std::size_t image_size = 128;

  void validate() const;
  double angle_rad(std::size_t view) const;
  // Ray samples per line: covers the image diagonal at unit spacing.
  std::size_t samples_per_ray() const;
};

// Line integrals by ray marching at unit steps with bilinear interpolation.
Sinogram forward_project(const Image& image, const Geometry& geometry);
// Exact transpose of forward_project.
Image back_project(const Sinogram& sinogram, const Geometry& geometry);

// Restricted to a subset of views. `out` keeps the full sinogram shape; only
// rows listed in `views` are written.
void forward_project_views(const Image& image, const Geometry& geometry, std::span<const std::size_t> views,
                           Sinogram& out);
// Accumulates the transpose of the listed views into `out`.
void back_project_views(const Sinogram& sinogram, const Geometry& geometry, std::span<const std::size_t> views,
                        Image& out);

struct NoiseLevel {
  const char* name;
  double counts_scale;
};

// Expected counts at the sinogram maximum.
inline constexpr NoiseLevel kNoiseLow{"low", 200.0};
inline constexpr NoiseLevel kNoiseMedium{"medium", 50.0};
inline constexpr NoiseLevel kNoiseHigh{"high", 10.0};

// Scales the sinogram so its maximum equals counts_scale, draws each bin from
// Poisson(scaled value) and scales back to the input units.
Sinogram add_poisson_noise(const Sinogram& sinogram, double counts_scale, std::uint64_t seed);

}  // namespace sinogan
