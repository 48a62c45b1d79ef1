#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sinogan/autodiff.hpp"
#include "sinogan/random.hpp"
#include "sinogan/tensor.hpp"

namespace testing {

using sinogan::Shape;
using sinogan::Tensor;
namespace ad = sinogan::ad;

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  sinogan::CounterRng rng(seed, 0x7e57);
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  sinogan::CounterRng rng(seed, 0x7e58);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Builds a scalar loss from leaf nodes holding `inputs`.
using LossBuilder = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

inline double eval_loss(const LossBuilder& build, const std::vector<Tensor>& inputs) {
  ad::Graph g;
  std::vector<ad::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(g.constant(t));
  return build(g, leaves).value().item();
}

// Largest relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
// over the inputs, with central differences of step h. `max_coords` caps the
// number of coordinates probed per input (evenly strided).
inline double gradient_check(const LossBuilder& build, const std::vector<Tensor>& inputs, double h = 1e-5,
                             std::size_t max_coords = 0) {
  ad::Graph g;
  std::vector<ad::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(g.variable(t));
  g.backward(build(g, leaves));

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor analytic = g.grad(leaves[i]);
    const std::size_t n = inputs[i].numel();
    const std::size_t stride = max_coords && n > max_coords ? n / max_coords : 1;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t k = 0; k < n; k += stride) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[i][k] += h;
      minus[i][k] -= h;
      const double numeric = (eval_loss(build, plus) - eval_loss(build, minus)) / (2.0 * h);
      diff2 += (analytic[k] - numeric) * (analytic[k] - numeric);
      a2 += analytic[k] * analytic[k];
      n2 += numeric * numeric;
    }
    const double denom = std::sqrt(std::max(a2, n2));
    if (denom > 0.0) worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

// Contracts a tensor node with fixed random weights into a scalar.
inline ad::Var project_to_scalar(ad::Graph& g, ad::Var x, std::uint64_t seed) {
  return ad::sum(ad::mul(x, g.constant(random_tensor(x.shape(), seed))));
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / ("sinogan_test_" + name)) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::filesystem::path operator/(const std::string& s) const { return path / s; }
};

}  // namespace testing
