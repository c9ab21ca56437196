#include "fedrecon/rng.hpp"

#include <cmath>
#include <numbers>

namespace fedrecon {

std::uint64_t CounterRng::below(std::uint64_t n) noexcept {
  // Rejection on the top of the range keeps the result exactly uniform.
  const std::uint64_t limit = max() - max() % n;
  std::uint64_t v = next();
  while (v >= limit) v = next();
  return v % n;
}

double CounterRng::normal() noexcept {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace fedrecon
