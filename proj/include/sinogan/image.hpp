#pragma once

#include <cstddef>
#include <vector>

namespace sinogan {

// Activity distribution on a pixel grid, row-major. Row 0 is the top of the
// field; pixel centres map onto [-1, 1]^2.
struct Image {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Image() = default;
  Image(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  static Image square(std::size_t size, double fill = 0.0) { return Image(size, size, fill); }

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double max() const;

  friend bool operator==(const Image&, const Image&) = default;
};

// views x bins line integrals. counts_scale is the expected count at the
// sinogram maximum used when noise was drawn; 0 for noise-free data.
struct Sinogram {
  std::size_t views = 0;
  std::size_t bins = 0;
  double counts_scale = 0.0;
  std::vector<double> values;

  Sinogram() = default;
  Sinogram(std::size_t v, std::size_t b, double fill = 0.0) : views(v), bins(b), values(v * b, fill) {}

  double& at(std::size_t v, std::size_t b) { return values[v * bins + b]; }
  double at(std::size_t v, std::size_t b) const { return values[v * bins + b]; }
  double max() const;

  friend bool operator==(const Sinogram&, const Sinogram&) = default;
};

}  // namespace sinogan
