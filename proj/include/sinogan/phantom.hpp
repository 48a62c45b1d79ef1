#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sinogan/image.hpp"

namespace sinogan {

enum class ShapeKind { Ellipse, Rectangle };

// Geometry in unit-field coordinates ([-1,1]^2, y up).
struct PhantomShape {
  ShapeKind kind = ShapeKind::Ellipse;
  double center_x = 0.0;
  double center_y = 0.0;
  double semi_axis_x = 0.5;  // before rotation
  double semi_axis_y = 0.5;
  double angle_rad = 0.0;
  double intensity = 1.0;

  bool contains(double x, double y) const;
};

struct PhantomConfig {
  std::uint64_t seed = 0;
  std::size_t size = 128;
  int min_shapes = 1;
  int max_shapes = 8;
  double min_intensity = 0.2;
  double max_intensity = 1.0;
  // Full axis length as a fraction of the field width.
  double min_extent = 0.05;
  double max_extent = 0.40;
  bool allow_ellipses = true;
  bool allow_rectangles = true;

  // Throws ConfigError on empty ranges or negative intensities.
  void validate() const;
};

// Pixel-centre coordinate helpers for an n x n grid.
double pixel_center_x(std::size_t col, std::size_t n);
double pixel_center_y(std::size_t row, std::size_t n);

std::vector<PhantomShape> sample_phantom_shapes(const PhantomConfig& config);

// Additive overlap, clipped to the inscribed field-of-view disc, normalised to
// max 1 when any pixel is non-zero.
Image render_phantom(std::span<const PhantomShape> shapes, std::size_t size);

Image generate_random_phantom(const PhantomConfig& config);

struct SheppLoganEllipse {
  double intensity;
  double semi_axis_x;
  double semi_axis_y;
  double center_x;
  double center_y;
  double angle_deg;
};

enum class SheppLoganVariant {
  Modified,  // contrast-improved intensities, image in [0, 1]
  Original,  // 1974 intensities
};

std::span<const SheppLoganEllipse> shepp_logan_ellipses(SheppLoganVariant variant = SheppLoganVariant::Modified);

double ellipse_sum_at(std::span<const SheppLoganEllipse> ellipses, double x, double y);

// Sum of ellipses at pixel centres; negative rounding residue clamped to 0.
Image render_ellipses(std::span<const SheppLoganEllipse> ellipses, std::size_t size);

// size >= 16.
Image shepp_logan(std::size_t size, SheppLoganVariant variant = SheppLoganVariant::Modified);

}  // namespace sinogan
