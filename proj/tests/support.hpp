#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <string>
#include <unistd.h>

#include "fedrecon/complex_image.hpp"
#include "fedrecon/rng.hpp"

namespace testing {

using fedrecon::ComplexImageD;

template <typename Real = double>
fedrecon::BasicComplexImage<Real> random_image(std::size_t rows, std::size_t cols, fedrecon::CounterRng& rng) {
  fedrecon::BasicComplexImage<Real> x(rows, cols);
  for (auto& v : x) v = {static_cast<Real>(rng.normal()), static_cast<Real>(rng.normal())};
  return x;
}

// Centered unitary DFT by direct summation: roll by n/2, plain DFT, roll back.
inline ComplexImageD brute_dft2c(const ComplexImageD& x, bool inverse = false) {
  const std::size_t R = x.rows();
  const std::size_t C = x.cols();
  const double sign = inverse ? 1.0 : -1.0;
  ComplexImageD out(R, C);
  for (std::size_t kr = 0; kr < R; ++kr) {
    for (std::size_t kc = 0; kc < C; ++kc) {
      // output index k corresponds to unshifted frequency (k - R/2) mod R
      const std::size_t ur = (kr + R - R / 2) % R;
      const std::size_t uc = (kc + C - C / 2) % C;
      std::complex<double> acc{};
      for (std::size_t nr = 0; nr < R; ++nr) {
        for (std::size_t nc = 0; nc < C; ++nc) {
          // input index n is read from the centered array at (n + R/2) mod R
          const auto& v = x((nr + R / 2) % R, (nc + C / 2) % C);
          const double ph = sign * 2.0 * std::numbers::pi *
                            (static_cast<double>(ur * nr) / static_cast<double>(R) +
                             static_cast<double>(uc * nc) / static_cast<double>(C));
          acc += v * std::complex<double>(std::cos(ph), std::sin(ph));
        }
      }
      out(kr, kc) = acc / std::sqrt(static_cast<double>(R * C));
    }
  }
  return out;
}

template <typename Real>
double rel_diff(const fedrecon::BasicComplexImage<Real>& a, const fedrecon::BasicComplexImage<Real>& b) {
  double num = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) num += std::norm(std::complex<double>(a[i]) - std::complex<double>(b[i]));
  const double den = fedrecon::squared_norm(b);
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("fedrecon_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
