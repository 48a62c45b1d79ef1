#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sinogan/tensor.hpp"

namespace sinogan {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment buffers start at zero; step_count counts completed updates.
struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step_count = 0;

  static AdamState for_parameters(std::span<const Tensor> params, AdamConfig config);
};

// One bias-corrected Adam step applied in place to `params`.
void adam_update(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);
void adam_update(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state);

}  // namespace sinogan
