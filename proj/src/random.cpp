#include "sinogan/random.hpp"

#include <cmath>
#include <numbers>

#include "sinogan/errors.hpp"

namespace sinogan {

std::int64_t CounterRng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ConfigError("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(next_u64());
  // Rejection sampling.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return lo + static_cast<std::int64_t>(r % span);
}

double CounterRng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t CounterRng::poisson(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ContractError("poisson: invalid rate");
  if (lambda == 0.0) return 0;
  if (lambda < 30.0) {
    const double u = uniform();
    double p = std::exp(-lambda);
    double cdf = p;
    std::uint64_t k = 0;
    while (u >= cdf) {
      ++k;
      p *= lambda / static_cast<double>(k);
      cdf += p;
      if (p == 0.0 && cdf < u) break;  // tail exhausted by rounding
    }
    return k;
  }
  const double x = std::round(lambda + std::sqrt(lambda) * normal());
  return x < 0.0 ? 0 : static_cast<std::uint64_t>(x);
}

}  // namespace sinogan
