#include "sinogan/adam.hpp"

#include <cmath>

#include "sinogan/errors.hpp"

namespace sinogan {

AdamState AdamState::for_parameters(std::span<const Tensor> params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const Tensor& p : params) {
    s.first_moment.emplace_back(p.shape(), 0.0);
    s.second_moment.emplace_back(p.shape(), 0.0);
  }
  return s;
}

void adam_update(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state) {
  std::vector<Tensor*> ptrs;
  for (Tensor& p : params) ptrs.push_back(&p);
  adam_update(std::span<Tensor* const>(ptrs), grads, state);
}

void adam_update(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw DimensionError("adam_update: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.first_moment[i].shape() ||
        params[i]->shape() != state.second_moment[i].shape()) {
      throw DimensionError("adam_update: shape mismatch for parameter " + std::to_string(i));
    }
  }

  const AdamConfig& c = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->data();
    const double* g = grads[i].data();
    double* m = state.first_moment[i].data();
    double* v = state.second_moment[i].data();
    for (std::size_t k = 0; k < params[i]->numel(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

}  // namespace sinogan
