#include "sinogan/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "sinogan/errors.hpp"
#include "sinogan/random.hpp"

namespace sinogan {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

// Contrast-improved table: intensity, a, b, x0, y0, phi (degrees).
constexpr std::array<SheppLoganEllipse, 10> kModified{{
    {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
    {-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0},
    {-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0},
    {-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0},
    {0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0},
    {0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0},
    {0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0},
    {0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0},
    {0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0},
    {0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0},
}};

constexpr std::array<SheppLoganEllipse, 10> kOriginal{{
    {2.0, 0.69, 0.92, 0.0, 0.0, 0.0},
    {-0.98, 0.6624, 0.8740, 0.0, -0.0184, 0.0},
    {-0.02, 0.1100, 0.3100, 0.22, 0.0, -18.0},
    {-0.02, 0.1600, 0.4100, -0.22, 0.0, 18.0},
    {0.01, 0.2100, 0.2500, 0.0, 0.35, 0.0},
    {0.01, 0.0460, 0.0460, 0.0, 0.1, 0.0},
    {0.01, 0.0460, 0.0460, 0.0, -0.1, 0.0},
    {0.01, 0.0460, 0.0230, -0.08, -0.605, 0.0},
    {0.01, 0.0230, 0.0230, 0.0, -0.606, 0.0},
    {0.01, 0.0230, 0.0460, 0.06, -0.605, 0.0},
}};

bool inside_ellipse(const SheppLoganEllipse& e, double x, double y) {
  const double phi = e.angle_deg * kDegToRad;
  const double c = std::cos(phi), s = std::sin(phi);
  const double dx = x - e.center_x, dy = y - e.center_y;
  const double u = (dx * c + dy * s) / e.semi_axis_x;
  const double v = (-dx * s + dy * c) / e.semi_axis_y;
  return u * u + v * v <= 1.0;
}

}  // namespace

bool PhantomShape::contains(double x, double y) const {
  const double c = std::cos(angle_rad), s = std::sin(angle_rad);
  const double dx = x - center_x, dy = y - center_y;
  const double u = (dx * c + dy * s) / semi_axis_x;
  const double v = (-dx * s + dy * c) / semi_axis_y;
  if (kind == ShapeKind::Ellipse) return u * u + v * v <= 1.0;
  return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
}

void PhantomConfig::validate() const {
  if (size == 0) throw ConfigError("phantom size must be positive");
  if (min_shapes < 0 || max_shapes < min_shapes) throw ConfigError("phantom shape-count range is empty");
  if (min_intensity < 0.0 || max_intensity < min_intensity) throw ConfigError("phantom intensity range is invalid");
  if (min_extent <= 0.0 || max_extent < min_extent) throw ConfigError("phantom extent range is invalid");
  if (!allow_ellipses && !allow_rectangles) throw ConfigError("no phantom shape kinds enabled");
}

double pixel_center_x(std::size_t col, std::size_t n) {
  return (2.0 * static_cast<double>(col) + 1.0) / static_cast<double>(n) - 1.0;
}

double pixel_center_y(std::size_t row, std::size_t n) {
  return 1.0 - (2.0 * static_cast<double>(row) + 1.0) / static_cast<double>(n);
}

std::vector<PhantomShape> sample_phantom_shapes(const PhantomConfig& config) {
  config.validate();
  CounterRng rng(config.seed, /*stream=*/0x9a);
  const auto count = rng.uniform_int(config.min_shapes, config.max_shapes);
  std::vector<PhantomShape> shapes;
  shapes.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    PhantomShape s;
    if (config.allow_ellipses && config.allow_rectangles) {
      s.kind = rng.uniform() < 0.5 ? ShapeKind::Ellipse : ShapeKind::Rectangle;
    } else {
      s.kind = config.allow_ellipses ? ShapeKind::Ellipse : ShapeKind::Rectangle;
    }
    // Uniform in the inscribed unit disc.
    const double r = std::sqrt(rng.uniform());
    const double t = 2.0 * std::numbers::pi * rng.uniform();
    s.center_x = r * std::cos(t);
    s.center_y = r * std::sin(t);
    // Full axis over field width (2) equals the semi-axis in unit coordinates.
    s.semi_axis_x = rng.uniform(config.min_extent, config.max_extent);
    s.semi_axis_y = rng.uniform(config.min_extent, config.max_extent);
    s.angle_rad = std::numbers::pi * rng.uniform();
    s.intensity = rng.uniform(config.min_intensity, config.max_intensity);
    shapes.push_back(s);
  }
  return shapes;
}

Image render_phantom(std::span<const PhantomShape> shapes, std::size_t size) {
  Image img = Image::square(size);
  for (std::size_t r = 0; r < size; ++r) {
    const double y = pixel_center_y(r, size);
    for (std::size_t c = 0; c < size; ++c) {
      const double x = pixel_center_x(c, size);
      if (x * x + y * y > 1.0) continue;
      double v = 0.0;
      for (const PhantomShape& s : shapes) {
        if (s.contains(x, y)) v += s.intensity;
      }
      img.at(r, c) = v;
    }
  }
  const double peak = img.max();
  if (peak > 0.0) {
    for (double& v : img.values) v /= peak;
  }
  return img;
}

Image generate_random_phantom(const PhantomConfig& config) {
  const auto shapes = sample_phantom_shapes(config);
  return render_phantom(shapes, config.size);
}

std::span<const SheppLoganEllipse> shepp_logan_ellipses(SheppLoganVariant variant) {
  return variant == SheppLoganVariant::Modified ? std::span<const SheppLoganEllipse>(kModified)
                                                : std::span<const SheppLoganEllipse>(kOriginal);
}

double ellipse_sum_at(std::span<const SheppLoganEllipse> ellipses, double x, double y) {
  double v = 0.0;
  for (const auto& e : ellipses) {
    if (inside_ellipse(e, x, y)) v += e.intensity;
  }
  return v;
}

Image render_ellipses(std::span<const SheppLoganEllipse> ellipses, std::size_t size) {
  Image img = Image::square(size);
  for (std::size_t r = 0; r < size; ++r) {
    const double y = pixel_center_y(r, size);
    for (std::size_t c = 0; c < size; ++c) {
      img.at(r, c) = std::max(0.0, ellipse_sum_at(ellipses, pixel_center_x(c, size), y));
    }
  }
  return img;
}

Image shepp_logan(std::size_t size, SheppLoganVariant variant) {
  if (size < 16) throw ConfigError("shepp_logan: size must be at least 16");
  return render_ellipses(shepp_logan_ellipses(variant), size);
}

}  // namespace sinogan
