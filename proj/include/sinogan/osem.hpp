#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "sinogan/image.hpp"
#include "sinogan/projector.hpp"

namespace sinogan {

struct OsemConfig {
  std::size_t num_subsets = 4;
  std::size_t num_iterations = 10;  // full passes over all subsets
  double init_value = 1.0;
  double epsilon = 1e-12;

  void validate(const Geometry& geometry) const;
};

// View v belongs to subset v mod num_subsets.
std::vector<std::vector<std::size_t>> interleaved_subsets(std::size_t num_views, std::size_t num_subsets);

// Called after each full pass with the 1-based pass index.
using IterationCallback = std::function<void(std::size_t pass, const Image& estimate)>;

// Holds the per-subset sensitivity images for one geometry/config pair.
class OsemReconstructor {
 public:
  OsemReconstructor(Geometry geometry, OsemConfig config);

  Image reconstruct(const Sinogram& sinogram, const IterationCallback& on_pass = {}) const;
  // Starts from `initial` instead of the uniform image.
  Image reconstruct_from(const Sinogram& sinogram, Image initial, const IterationCallback& on_pass = {}) const;

  const std::vector<Image>& sensitivities() const { return sensitivity_; }

 private:
  Geometry geometry_;
  OsemConfig config_;
  std::vector<std::vector<std::size_t>> subsets_;
  std::vector<Image> sensitivity_;
};

Image osem_reconstruct(const Sinogram& sinogram, const Geometry& geometry, const OsemConfig& config,
                       const IterationCallback& on_pass = {});

// Sum over bins of y*log(Ax + eps) - Ax, without the log(y!) constant.
double poisson_log_likelihood(const Sinogram& sinogram, const Image& image, const Geometry& geometry,
                              double epsilon = 1e-12);

}  // namespace sinogan
