#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "fedrecon/data.hpp"
#include "fedrecon/errors.hpp"
#include "fedrecon/eval.hpp"
#include "support.hpp"

using namespace fedrecon;
using testing::random_image;

namespace {

// Direct per-window SSIM with 2-D Gaussian weights and population moments.
double brute_ssim(const std::vector<double>& a, const std::vector<double>& b, int rows, int cols) {
  const int n = 11;
  const double sigma = 1.5;
  std::vector<double> g(n);
  double gs = 0.0;
  for (int i = 0; i < n; ++i) {
    g[i] = std::exp(-((i - 5.0) * (i - 5.0)) / (2 * sigma * sigma));
    gs += g[i];
  }
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  double total = 0.0;
  int count = 0;
  for (int r0 = 0; r0 + n <= rows; ++r0) {
    for (int q0 = 0; q0 + n <= cols; ++q0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          const double w = g[i] * g[j] / (gs * gs);
          const double x = a[(r0 + i) * cols + q0 + j];
          const double y = b[(r0 + i) * cols + q0 + j];
          ma += w * x;
          mb += w * y;
          saa += w * x * x;
          sbb += w * y * y;
          sab += w * x * y;
        }
      }
      const double va = saa - ma * ma;
      const double vb = sbb - mb * mb;
      const double cov = sab - ma * mb;
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / count;
}

ComplexImageD real_image(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  ComplexImageD x(rows, cols);
  for (std::size_t i = 0; i < v.size(); ++i) x[i] = v[i];
  return x;
}

ComplexImage phantom(std::uint64_t seed) {
  ClientDatasetSpec spec;
  CounterRng rng(seed);
  return generate_phantom(spec, rng);
}

MetricReport sample_report() {
  MetricReport r;
  int img = 0;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 2; ++i) {
      r.rows.push_back({"zero_filled", "none", "own", "test", c, c, i, 18.0 + c + 0.5 * i, 0.4 + 0.01 * c});
      r.rows.push_back({"ssfedmri", "personalized", "own", "test", c, c, i, 22.0 + c + 0.25 * i, 0.6 + 0.02 * i});
      ++img;
    }
  }
  r.rows.push_back({"ssfedmri", "global", "own", "test", 1, 1, 0, 21.125, 0.55});
  r.rows.push_back({"reference", "none", "own", "test", 0, 0, 0, std::numeric_limits<double>::infinity(), 1.0});
  return r;
}

}  // namespace

TEST_CASE("PSNR basics") {
  CounterRng rng(1);
  const auto x = random_image(16, 16, rng);
  CHECK(std::isinf(psnr(x, x)));
  CHECK(psnr(x, x) > 0);
  const auto p = phantom(3);
  CHECK(std::isinf(psnr(p, p)));

  ComplexImageD ones(8, 8);
  for (auto& v : ones) v = 1.0;
  auto dim = ones;
  for (auto& v : dim) v = 0.9;
  CHECK(psnr(ones, dim) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr_from_mse(0.01) == doctest::Approx(20.0));
  CHECK(psnr_from_mse(0.0) == std::numeric_limits<double>::infinity());
  ComplexImageD other(4, 4);
  CHECK_THROWS_AS(psnr(ones, other), ShapeError);
}

TEST_CASE("PSNR is scale-normalized by the reference peak") {
  CounterRng rng(2);
  const auto x = random_image(16, 16, rng);
  const auto y = random_image(16, 16, rng);
  auto x3 = x;
  auto y3 = y;
  for (auto& v : x3) v *= 3.0;
  for (auto& v : y3) v *= 3.0;
  CHECK(psnr(x3, y3) == doctest::Approx(psnr(x, y)).epsilon(1e-12));
}

TEST_CASE("PSNR decreases as noise grows") {
  const auto ref = image_cast<double>(phantom(4));
  CounterRng rng(5);
  const auto noise = random_image(ref.rows(), ref.cols(), rng);
  double prev = std::numeric_limits<double>::infinity();
  for (double sd : {0.001, 0.01, 0.05, 0.1, 0.3}) {
    auto y = ref;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += sd * noise[i];
    const double v = psnr(ref, y);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("zero-filled reconstruction of a phantom sits in a plausible PSNR range") {
  const auto truth = phantom(6);
  CounterRng rng(7);
  const auto m = generate_mask(64, 64, 4.0, 0.08, rng);
  const auto zf = adjoint(forward_encode(truth, m), m);
  const double v = psnr(truth, zf);
  CHECK(v > 10.0);
  CHECK(v < 35.0);
  const double s = ssim(truth, zf);
  CHECK(s > 0.0);
  CHECK(s < 1.0);
}

TEST_CASE("SSIM basics") {
  const auto p = phantom(8);
  CHECK(ssim(p, p) == 1.0);
  const ComplexImage zeros(p.rows(), p.cols());
  const double z = ssim(p, zeros);
  CHECK(z > 0.0);
  CHECK(z < 0.2);
  CounterRng rng(9);
  const auto a = random_image(20, 20, rng);
  const auto b = random_image(20, 20, rng);
  const ComplexImageD small(8, 8);
  CHECK_THROWS_AS(ssim(small, small), ConfigError);
  const auto ma = magnitude(a);
  const auto mb = magnitude(b);
  CHECK(ssim(ma, mb, 20, 20) == doctest::Approx(ssim(mb, ma, 20, 20)).epsilon(1e-14));
}

TEST_CASE("SSIM matches the direct per-window computation") {
  CounterRng rng(10);
  for (int t = 0; t < 10; ++t) {
    const int rows = 16 + static_cast<int>(rng.below(12));
    const int cols = 16 + static_cast<int>(rng.below(12));
    std::vector<double> a(rows * cols);
    std::vector<double> b(rows * cols);
    for (auto& v : a) v = rng.uniform();
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::clamp(a[i] + 0.2 * rng.normal(), 0.0, 1.0);
    CHECK(ssim(a, b, rows, cols) == doctest::Approx(brute_ssim(a, b, rows, cols)).epsilon(1e-3));
    CHECK(std::abs(ssim(a, b, rows, cols) - brute_ssim(a, b, rows, cols)) < 1e-12);
  }
}

TEST_CASE("SSIM agrees with reference values from a standard implementation") {
  // a = ((7i + 3j + k) mod 11) / 10, b = clip(a + 0.15 sin(0.7 i + 0.3 j + k), 0, 1) on 24x20;
  // Gaussian window sigma 1.5, population covariance, data range 1.
  const double expected[3] = {0.9574136082234682, 0.9584355446345408, 0.9572352989648412};
  for (int k = 0; k < 3; ++k) {
    std::vector<double> a(24 * 20);
    std::vector<double> b(24 * 20);
    for (int i = 0; i < 24; ++i) {
      for (int j = 0; j < 20; ++j) {
        const double v = ((i * 7 + j * 3 + k) % 11) / 10.0;
        a[i * 20 + j] = v;
        b[i * 20 + j] = std::clamp(v + 0.15 * std::sin(0.7 * i + 0.3 * j + k), 0.0, 1.0);
      }
    }
    CHECK(ssim(a, b, 24, 20) == doctest::Approx(expected[k]).epsilon(1e-9));
  }
}

TEST_CASE("complex SSIM uses reference-normalized magnitudes") {
  std::vector<double> a(20 * 20);
  std::vector<double> b(20 * 20);
  CounterRng rng(11);
  for (auto& v : a) v = rng.uniform();
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.8 * a[i] + 0.1 * rng.uniform();
  const double peak = *std::max_element(a.begin(), a.end());
  std::vector<double> as(a);
  std::vector<double> bs(b);
  for (auto& v : as) v /= peak;
  for (auto& v : bs) v /= peak;
  CHECK(ssim(real_image(a, 20, 20), real_image(b, 20, 20)) == doctest::Approx(ssim(as, bs, 20, 20)).epsilon(1e-12));
}

TEST_CASE("metric report CSV round-trip") {
  const auto r = sample_report();
  const auto csv = r.to_csv();
  CHECK(csv.rfind("method,model,scenario,split,model_client,data_client,image,psnr,ssim\n", 0) == 0);
  const auto back = MetricReport::from_csv(csv);
  REQUIRE(back.rows.size() == r.rows.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    CHECK(back.rows[i].method == r.rows[i].method);
    CHECK(back.rows[i].model == r.rows[i].model);
    CHECK(back.rows[i].data_client == r.rows[i].data_client);
    CHECK(back.rows[i].image == r.rows[i].image);
    if (std::isinf(r.rows[i].psnr)) {
      CHECK(std::isinf(back.rows[i].psnr));
    } else {
      CHECK(back.rows[i].psnr == doctest::Approx(r.rows[i].psnr).epsilon(1e-9));
    }
    CHECK(back.rows[i].ssim == doctest::Approx(r.rows[i].ssim).epsilon(1e-9));
  }
  CHECK(back.to_csv() == csv);
  CHECK_THROWS(MetricReport::from_csv("method,model\nx,y\n"));
}

TEST_CASE("metric summaries") {
  const auto s = sample_report().summarize();
  REQUIRE(s.size() == 8);
  CHECK(s[0].method == "zero_filled");
  CHECK(s[0].data_client == 0);
  CHECK(s[0].count == 2);
  CHECK(s[0].psnr == doctest::Approx(18.25));
  CHECK(s[1].method == "ssfedmri");
  CHECK(s[1].psnr == doctest::Approx(22.125));
  CHECK(s[1].ssim == doctest::Approx(0.61));
  CHECK(std::isinf(s.back().psnr));
  CHECK(format_metric(std::numeric_limits<double>::infinity(), 4) == "inf");
  CHECK(format_metric(1.23456, 2) == "1.23");
}

TEST_CASE("comparison table matches the golden file") {
  std::ifstream in(std::string(FEDRECON_FIXTURES) + "/table_golden.txt");
  REQUIRE(in.good());
  std::stringstream golden;
  golden << in.rdbuf();
  CHECK(sample_report().to_table() == golden.str());
}
