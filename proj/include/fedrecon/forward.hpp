#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedrecon/complex_image.hpp"
#include "fedrecon/rng.hpp"

namespace fedrecon {

// 1-D Cartesian line mask: one flag per k-space column (phase-encode axis).
// A sampled column is sampled for every row.
struct SamplingMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> lines;
  double acceleration = 1.0;
  double center_fraction = 0.0;
  // Fully sampled calibration band [center_begin, center_end).
  std::size_t center_begin = 0;
  std::size_t center_end = 0;

  bool sampled(std::size_t col) const noexcept { return lines[col] != 0; }
  std::size_t sampled_count() const noexcept;
  double sampled_fraction() const noexcept { return static_cast<double>(sampled_count()) / static_cast<double>(cols); }
  bool in_center(std::size_t col) const noexcept { return col >= center_begin && col < center_end; }

  // Throws ConfigError when the structural invariants do not hold.
  void validate() const;

  // All lines sampled.
  static SamplingMask full(std::size_t rows, std::size_t cols);

  friend bool operator==(const SamplingMask&, const SamplingMask&) = default;
};

// Centered calibration band of round(center_fraction * cols) lines around cols/2.
void center_band(std::size_t cols, double center_fraction, std::size_t& begin, std::size_t& end);

SamplingMask generate_mask(std::size_t rows, std::size_t cols, double acceleration, double center_fraction,
                           CounterRng& rng);

template <typename Real>
void apply_mask(BasicComplexImage<Real>& k, const SamplingMask& m);

// y = P F x + e, with e circular complex Gaussian (E|e|^2 = noise_sd^2) on sampled entries only.
template <typename Real>
BasicComplexImage<Real> forward_encode(const BasicComplexImage<Real>& x, const SamplingMask& m, double noise_sd,
                                       CounterRng& rng);

// Noise-free A x.
template <typename Real>
BasicComplexImage<Real> forward_encode(const BasicComplexImage<Real>& x, const SamplingMask& m);

// Zero-filled reconstruction F^H P y.
template <typename Real>
BasicComplexImage<Real> adjoint(const BasicComplexImage<Real>& y, const SamplingMask& m);

struct CgSettings {
  double tol = 1e-6;
  int max_iter = 20;

  friend bool operator==(const CgSettings&, const CgSettings&) = default;
};

template <typename Real>
struct DcResult {
  BasicComplexImage<Real> image;
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = true;
};

// Per-iteration record of one CG solve, kept for reverse-mode differentiation
// through the iterations themselves.
template <typename Real>
struct CgTape {
  BasicComplexImage<Real> r0;
  std::vector<BasicComplexImage<Real>> p;   // search direction before step i
  std::vector<BasicComplexImage<Real>> q;   // M p
  std::vector<BasicComplexImage<Real>> r;   // residual after step i
  std::vector<double> rr;                   // |r|^2 before step i (rr[0] = |r0|^2)
  std::vector<double> pq;
  std::vector<double> alpha;
  std::vector<double> beta;                 // empty entry when the loop stopped after step i
};

// Regularized data consistency
//   argmin_x |A x - y|^2 + lambda |x - z|^2
// solved by CG on (A^H A + lambda I) x = A^H y + lambda z, warm-started at z.
template <typename Real>
class DataConsistency {
 public:
  DataConsistency(const BasicComplexImage<Real>& y, const SamplingMask& m, double lambda, CgSettings cg = {});

  DcResult<Real> solve(const BasicComplexImage<Real>& z, CgTape<Real>* tape = nullptr) const;

  // Cotangent w.r.t. z given the cotangent of the solution: lambda M^{-1} xbar.
  DcResult<Real> solve_adjoint(const BasicComplexImage<Real>& xbar) const;

  // Cotangent w.r.t. z obtained by back-propagating through the recorded CG iterations.
  BasicComplexImage<Real> backprop_tape(const CgTape<Real>& tape, const BasicComplexImage<Real>& xbar) const;

  // (A^H A + lambda I) x
  BasicComplexImage<Real> normal(const BasicComplexImage<Real>& x) const;

  const BasicComplexImage<Real>& zero_filled() const noexcept { return aty_; }
  const SamplingMask& mask() const noexcept { return mask_; }
  double lambda() const noexcept { return lambda_; }

 private:
  DcResult<Real> cg(const BasicComplexImage<Real>& b, const BasicComplexImage<Real>& x0, CgTape<Real>* tape) const;

  SamplingMask mask_;
  double lambda_;
  CgSettings settings_;
  BasicComplexImage<Real> aty_;
};

template <typename Real>
DcResult<Real> data_consistency(const BasicComplexImage<Real>& z, const BasicComplexImage<Real>& y,
                                const SamplingMask& m, double lambda, CgSettings cg = {});

}  // namespace fedrecon
