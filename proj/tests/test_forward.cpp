#include <doctest.h>

#include <chrono>
#include <cmath>

#include "fedrecon/errors.hpp"
#include "fedrecon/fft.hpp"
#include "fedrecon/forward.hpp"
#include "support.hpp"

using namespace fedrecon;
using testing::random_image;
using testing::rel_diff;

namespace {

SamplingMask mask_for(std::size_t n, double acc, double cf, std::uint64_t seed) {
  CounterRng rng(seed);
  return generate_mask(n, n, acc, cf, rng);
}

// Closed-form minimizer in k-space: (y + lambda zhat) / (1 + lambda) on sampled lines, zhat elsewhere.
ComplexImageD dc_closed_form(const ComplexImageD& z, const ComplexImageD& y, const SamplingMask& m, double lambda) {
  auto zk = testing::brute_dft2c(z);
  for (std::size_t r = 0; r < zk.rows(); ++r) {
    for (std::size_t c = 0; c < zk.cols(); ++c) {
      if (m.sampled(c)) zk(r, c) = (y(r, c) + lambda * zk(r, c)) / (1.0 + lambda);
    }
  }
  return testing::brute_dft2c(zk, true);
}

}  // namespace

TEST_CASE("fft2c matches the direct-summation centered unitary DFT") {
  CounterRng rng(11);
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{8, 8}, {6, 10}, {7, 5}, {16, 12}}) {
    const auto x = random_image(r, c, rng);
    CHECK(rel_diff(fft2c(x), testing::brute_dft2c(x)) < 1e-12);
    CHECK(rel_diff(ifft2c(x), testing::brute_dft2c(x, true)) < 1e-12);
    CHECK(rel_diff(ifft2c(fft2c(x)), x) < 1e-12);
  }
}

TEST_CASE("forward_encode of zeros is zero") {
  ComplexImageD x(8, 8);
  const auto m = mask_for(8, 2.0, 0.25, 1);
  const auto y = forward_encode(x, m);
  for (const auto& v : y) CHECK(v == std::complex<double>(0.0, 0.0));
}

TEST_CASE("full mask preserves the norm") {
  CounterRng rng(2);
  const auto x = random_image(16, 16, rng);
  const auto y = forward_encode(x, SamplingMask::full(16, 16));
  CHECK(norm(y) == doctest::Approx(norm(x)).epsilon(1e-12));
}

TEST_CASE("centered impulse has flat spectrum of magnitude 1/8") {
  ComplexImageD x(8, 8);
  x(4, 4) = 1.0;
  const auto y = forward_encode(x, SamplingMask::full(8, 8));
  const auto oracle = testing::brute_dft2c(x);
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(std::abs(y[i]) == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(std::abs(y[i] - oracle[i]) < 1e-14);
  }
}

TEST_CASE("unsampled k-space entries are exactly zero, noise included") {
  CounterRng rng(3);
  const auto x = random_image(32, 32, rng);
  const auto m = mask_for(32, 4.0, 0.08, 5);
  auto nrng = CounterRng(9);
  const auto y = forward_encode(x, m, 0.1, nrng);
  for (std::size_t r = 0; r < 32; ++r) {
    for (std::size_t c = 0; c < 32; ++c) {
      if (!m.sampled(c)) CHECK(y(r, c) == std::complex<double>(0.0, 0.0));
    }
  }
}

TEST_CASE("measurement noise is circular Gaussian with E|e|^2 = noise_sd^2") {
  ComplexImageD x(64, 64);
  const auto m = SamplingMask::full(64, 64);
  const double sd = 0.3;
  double power = 0.0;
  double re2 = 0.0;
  double im2 = 0.0;
  double mean_re = 0.0;
  std::size_t n = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto rng = CounterRng(100 + s);
    const auto y = forward_encode(x, m, sd, rng);
    for (const auto& v : y) {
      power += std::norm(v);
      re2 += v.real() * v.real();
      im2 += v.imag() * v.imag();
      mean_re += v.real();
      ++n;
    }
  }
  CHECK(power / n == doctest::Approx(sd * sd).epsilon(0.02));
  CHECK(re2 / im2 == doctest::Approx(1.0).epsilon(0.03));
  CHECK(std::abs(mean_re / n) < 0.01);
}

TEST_CASE("forward_encode argument errors") {
  ComplexImageD x(8, 8);
  const auto m = mask_for(16, 2.0, 0.125, 1);
  CHECK_THROWS_AS(forward_encode(x, m), ShapeError);
  CHECK_THROWS_AS(adjoint(x, m), ShapeError);
  auto rng = CounterRng(1);
  CHECK_THROWS_AS(forward_encode(x, SamplingMask::full(8, 8), -1.0, rng), DomainError);
}

TEST_CASE("adjoint inverts a fully sampled encoding") {
  CounterRng rng(4);
  const auto x = random_image(24, 24, rng);
  const auto full = SamplingMask::full(24, 24);
  CHECK(rel_diff(adjoint(forward_encode(x, full), full), x) < 1e-10);
  ComplexImageD zero(24, 24);
  CHECK(norm(adjoint(zero, full)) == 0.0);
}

TEST_CASE("adjointness <Ax, y> = <x, A^H y>") {
  CounterRng rng(5);
  for (std::size_t n : {8u, 32u, 64u}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto m = mask_for(n, 4.0, 0.08, 40 + trial);
      const auto x = random_image(n, n, rng);
      const auto y = random_image(n, n, rng);
      const auto lhs = inner(forward_encode(x, m), y);
      const auto rhs = inner(x, adjoint(y, m));
      CHECK(std::abs(lhs - rhs) <= 1e-8 * norm(x) * norm(y));
    }
  }
}

TEST_CASE("A^H A is a projection") {
  CounterRng rng(6);
  const auto m = mask_for(64, 4.0, 0.08, 77);
  const auto x = random_image(64, 64, rng);
  const auto once = adjoint(forward_encode(x, m), m);
  const auto twice = adjoint(forward_encode(once, m), m);
  CHECK(rel_diff(twice, once) <= 1e-10);
}

TEST_CASE("generate_mask: 256 columns at 4x with 8% center") {
  const auto m = mask_for(256, 4.0, 0.08, 12);
  // 256 / 4 = 64 lines; round(0.08 * 256) = round(20.48) = 20 center lines starting at 128 - 10.
  CHECK(m.sampled_count() == 64);
  CHECK(m.center_begin == 118);
  CHECK(m.center_end == 138);
  for (std::size_t c = 118; c < 138; ++c) CHECK(m.sampled(c));
  CHECK(m.rows == 256);
  CHECK(m.acceleration == 4.0);
}

TEST_CASE("generate_mask edge cases") {
  SUBCASE("acceleration 1 samples everything") {
    const auto m = mask_for(32, 1.0, 0.0, 3);
    CHECK(m.sampled_count() == 32);
  }
  SUBCASE("same seed gives the same mask, other seeds differ") {
    CHECK(mask_for(64, 4.0, 0.08, 8) == mask_for(64, 4.0, 0.08, 8));
    CHECK_FALSE(mask_for(64, 4.0, 0.08, 8) == mask_for(64, 4.0, 0.08, 9));
  }
  SUBCASE("infeasible parameters") {
    CounterRng rng(1);
    CHECK_THROWS_AS(generate_mask(64, 64, 0.5, 0.0, rng), ConfigError);
    CHECK_THROWS_AS(generate_mask(64, 64, 4.0, 0.3, rng), ConfigError);
    CHECK_THROWS_AS(generate_mask(64, 64, 4.0, -0.1, rng), ConfigError);
  }
}

TEST_CASE("mask statistics over many draws") {
  for (std::size_t cols : {64u, 96u, 128u}) {
    for (std::uint64_t s = 0; s < 300; ++s) {
      const auto m = mask_for(cols, 4.0, 0.08, 1000 + s);
      CHECK(std::abs(m.sampled_fraction() - 0.25) <= 0.02);
      for (std::size_t c = m.center_begin; c < m.center_end; ++c) REQUIRE(m.sampled(c));
    }
  }
}

TEST_CASE("data_consistency matches the closed-form k-space solution") {
  CounterRng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = trial < 5 ? 16 : 20;
    const auto m = mask_for(n, 3.0, 0.1, 500 + trial);
    const auto y = forward_encode(random_image(n, n, rng), m);
    const auto z = random_image(n, n, rng);
    const double lambda = trial % 2 ? 0.05 : 1.7;
    const auto res = data_consistency(z, y, m, lambda);
    CHECK(res.converged);
    CHECK(rel_diff(res.image, dc_closed_form(z, y, m, lambda)) <= 1e-6);
  }
}

TEST_CASE("data_consistency limits") {
  CounterRng rng(22);
  const auto m = mask_for(32, 4.0, 0.08, 5);
  SUBCASE("z already consistent with y is a fixed point") {
    const auto z = random_image(32, 32, rng);
    const auto y = forward_encode(z, m);
    CHECK(rel_diff(data_consistency(z, y, m, 0.05).image, z) <= 1e-6);
  }
  SUBCASE("huge lambda returns z") {
    const auto z = random_image(32, 32, rng);
    const auto y = forward_encode(random_image(32, 32, rng), m);
    CHECK(rel_diff(data_consistency(z, y, m, 1e8).image, z) <= 1e-3);
  }
  SUBCASE("non-positive lambda") {
    const auto z = random_image(32, 32, rng);
    CHECK_THROWS_AS(data_consistency(z, z, m, 0.0), DomainError);
    CHECK_THROWS_AS(data_consistency(z, z, m, -1.0), DomainError);
  }
  SUBCASE("non-convergence is reported") {
    const auto z = random_image(32, 32, rng);
    const auto y = forward_encode(random_image(32, 32, rng), m);
    const auto res = data_consistency(z, y, m, 0.05, CgSettings{1e-30, 1});
    CHECK_FALSE(res.converged);
    CHECK(res.iterations == 1);
    CHECK(res.relative_residual > 1e-30);
  }
}

TEST_CASE("32-bit data_consistency agrees with the closed form") {
  CounterRng rng(23);
  const auto m = mask_for(64, 4.0, 0.08, 6);
  const auto zd = random_image(64, 64, rng);
  const auto yd = forward_encode(random_image(64, 64, rng), m);
  const auto z = image_cast<float>(zd);
  const auto y = image_cast<float>(yd);
  const auto res = data_consistency(z, y, m, 0.05);
  CHECK(rel_diff(image_cast<double>(res.image), dc_closed_form(image_cast<double>(z), image_cast<double>(y), m, 0.05)) <
        1e-5);
}
