#include "fedrecon/forward.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedrecon/fft.hpp"

namespace fedrecon {
namespace {

template <typename Real>
void axpy(BasicComplexImage<Real>& y, double a, const BasicComplexImage<Real>& x) {
  const Real s = static_cast<Real>(a);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * x[i];
}

// y = x + a y
template <typename Real>
void xpay(BasicComplexImage<Real>& y, double a, const BasicComplexImage<Real>& x) {
  const Real s = static_cast<Real>(a);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + s * y[i];
}

template <typename Real>
void scale(BasicComplexImage<Real>& y, double a) {
  const Real s = static_cast<Real>(a);
  for (auto& v : y) v *= s;
}

void check_mask_shape(std::size_t rows, std::size_t cols, const SamplingMask& m, const char* what) {
  if (rows != m.rows || cols != m.cols) {
    throw ShapeError(std::string(what) + ": data " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " does not match mask " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
  }
}

}  // namespace

std::size_t SamplingMask::sampled_count() const noexcept {
  return static_cast<std::size_t>(std::count_if(lines.begin(), lines.end(), [](std::uint8_t v) { return v != 0; }));
}

void SamplingMask::validate() const {
  if (rows == 0 || cols == 0) throw ConfigError("mask dimensions must be positive");
  if (lines.size() != cols) throw ConfigError("mask line count does not match cols");
  if (sampled_count() == 0) throw ConfigError("mask samples no lines");
  if (center_begin > center_end || center_end > cols) throw ConfigError("mask center band out of range");
  for (std::size_t c = center_begin; c < center_end; ++c) {
    if (!sampled(c)) throw ConfigError("mask center band line " + std::to_string(c) + " is not sampled");
  }
}

SamplingMask SamplingMask::full(std::size_t rows, std::size_t cols) {
  SamplingMask m;
  m.rows = rows;
  m.cols = cols;
  m.lines.assign(cols, 1);
  m.acceleration = 1.0;
  m.center_fraction = 1.0;
  m.center_begin = 0;
  m.center_end = cols;
  return m;
}

void center_band(std::size_t cols, double center_fraction, std::size_t& begin, std::size_t& end) {
  const auto n = static_cast<std::size_t>(std::llround(center_fraction * static_cast<double>(cols)));
  begin = cols / 2 - std::min(n, cols) / 2;
  end = std::min(cols, begin + n);
}

SamplingMask generate_mask(std::size_t rows, std::size_t cols, double acceleration, double center_fraction,
                           CounterRng& rng) {
  if (rows == 0 || cols == 0) throw ConfigError("mask dimensions must be positive");
  if (!(acceleration >= 1.0) || !std::isfinite(acceleration)) {
    throw ConfigError("acceleration must be >= 1, got " + std::to_string(acceleration));
  }
  if (!(center_fraction >= 0.0) || center_fraction > 1.0 / acceleration + 1e-12) {
    throw ConfigError("center_fraction must lie in [0, 1/acceleration], got " + std::to_string(center_fraction));
  }
  std::size_t budget = static_cast<std::size_t>(std::llround(static_cast<double>(cols) / acceleration));
  budget = std::clamp<std::size_t>(budget, 1, cols);

  SamplingMask m;
  m.rows = rows;
  m.cols = cols;
  m.acceleration = acceleration;
  m.center_fraction = center_fraction;
  m.lines.assign(cols, 0);
  center_band(cols, center_fraction, m.center_begin, m.center_end);
  const std::size_t n_center = m.center_end - m.center_begin;
  if (n_center > budget) {
    throw ConfigError("center band of " + std::to_string(n_center) + " lines exceeds the budget of " +
                      std::to_string(budget) + " lines");
  }
  for (std::size_t c = m.center_begin; c < m.center_end; ++c) m.lines[c] = 1;

  std::vector<std::size_t> pool;
  pool.reserve(cols - n_center);
  for (std::size_t c = 0; c < cols; ++c) {
    if (!m.in_center(c)) pool.push_back(c);
  }
  // Partial Fisher-Yates: the first `extra` entries become a uniform sample without replacement.
  const std::size_t extra = budget - n_center;
  for (std::size_t i = 0; i < extra; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
    m.lines[pool[i]] = 1;
  }
  return m;
}

template <typename Real>
void apply_mask(BasicComplexImage<Real>& k, const SamplingMask& m) {
  check_mask_shape(k.rows(), k.cols(), m, "apply_mask");
  for (std::size_t r = 0; r < k.rows(); ++r) {
    for (std::size_t c = 0; c < k.cols(); ++c) {
      if (!m.sampled(c)) k(r, c) = {};
    }
  }
}

template <typename Real>
BasicComplexImage<Real> forward_encode(const BasicComplexImage<Real>& x, const SamplingMask& m) {
  check_mask_shape(x.rows(), x.cols(), m, "forward_encode");
  auto k = fft2c(x);
  apply_mask(k, m);
  return k;
}

template <typename Real>
BasicComplexImage<Real> forward_encode(const BasicComplexImage<Real>& x, const SamplingMask& m, double noise_sd,
                                       CounterRng& rng) {
  if (!(noise_sd >= 0.0)) throw DomainError("noise_sd must be non-negative");
  auto k = forward_encode(x, m);
  if (noise_sd > 0.0) {
    const double s = noise_sd / std::sqrt(2.0);
    for (std::size_t r = 0; r < k.rows(); ++r) {
      for (std::size_t c = 0; c < k.cols(); ++c) {
        if (!m.sampled(c)) continue;
        const double re = rng.normal() * s;
        const double im = rng.normal() * s;
        k(r, c) += std::complex<Real>(static_cast<Real>(re), static_cast<Real>(im));
      }
    }
  }
  return k;
}

template <typename Real>
BasicComplexImage<Real> adjoint(const BasicComplexImage<Real>& y, const SamplingMask& m) {
  check_mask_shape(y.rows(), y.cols(), m, "adjoint");
  auto k = y;
  apply_mask(k, m);
  return ifft2c(k);
}

template <typename Real>
DataConsistency<Real>::DataConsistency(const BasicComplexImage<Real>& y, const SamplingMask& m, double lambda,
                                       CgSettings cg)
    : mask_(m), lambda_(lambda), settings_(cg) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw DomainError("data consistency lambda must be positive, got " + std::to_string(lambda));
  }
  if (cg.max_iter < 1 || !(cg.tol >= 0.0)) throw ConfigError("invalid CG settings");
  aty_ = adjoint(y, m);
}

template <typename Real>
BasicComplexImage<Real> DataConsistency<Real>::normal(const BasicComplexImage<Real>& x) const {
  auto k = fft2c(x);
  apply_mask(k, mask_);
  auto out = ifft2c(k);
  axpy(out, lambda_, x);
  return out;
}

template <typename Real>
DcResult<Real> DataConsistency<Real>::cg(const BasicComplexImage<Real>& b, const BasicComplexImage<Real>& x0,
                                         CgTape<Real>* tape) const {
  DcResult<Real> res;
  const double bnorm = norm(b);
  if (bnorm == 0.0) {
    // M is invertible, so the solution of M x = 0 is exactly zero.
    res.image = BasicComplexImage<Real>(b.rows(), b.cols());
    return res;
  }
  const double threshold = settings_.tol * bnorm;

  res.image = x0;
  auto& x = res.image;
  auto r = normal(x);
  xpay(r, -1.0, b);  // r = b - M x0
  double rr = squared_norm(r);
  if (tape) {
    tape->r0 = r;
    tape->rr.push_back(rr);
  }
  res.relative_residual = std::sqrt(rr) / bnorm;
  if (std::sqrt(rr) <= threshold) return res;

  auto p = r;
  res.converged = false;
  for (int it = 0; it < settings_.max_iter; ++it) {
    auto q = normal(p);
    const double pq = real_inner(p, q);
    const double alpha = rr / pq;
    axpy(x, alpha, p);
    axpy(r, -alpha, q);
    const double rr_new = squared_norm(r);
    res.iterations = it + 1;
    res.relative_residual = std::sqrt(rr_new) / bnorm;
    if (tape) {
      tape->p.push_back(p);
      tape->q.push_back(std::move(q));
      tape->r.push_back(r);
      tape->rr.push_back(rr_new);
      tape->pq.push_back(pq);
      tape->alpha.push_back(alpha);
    }
    if (std::sqrt(rr_new) <= threshold) {
      res.converged = true;
      break;
    }
    const double beta = rr_new / rr;
    if (tape) tape->beta.push_back(beta);
    xpay(p, beta, r);
    rr = rr_new;
  }
  return res;
}

template <typename Real>
DcResult<Real> DataConsistency<Real>::solve(const BasicComplexImage<Real>& z, CgTape<Real>* tape) const {
  require_same_shape(z, aty_, "data_consistency");
  auto b = z;
  scale(b, lambda_);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += aty_[i];
  return cg(b, z, tape);
}

template <typename Real>
DcResult<Real> DataConsistency<Real>::solve_adjoint(const BasicComplexImage<Real>& xbar) const {
  require_same_shape(xbar, aty_, "data_consistency adjoint");
  auto res = cg(xbar, BasicComplexImage<Real>(xbar.rows(), xbar.cols()), nullptr);
  scale(res.image, lambda_);
  return res;
}

template <typename Real>
BasicComplexImage<Real> DataConsistency<Real>::backprop_tape(const CgTape<Real>& tape,
                                                             const BasicComplexImage<Real>& xbar) const {
  if (tape.rr.empty()) {
    // Zero right-hand side: the solve was skipped, the map is still lambda M^{-1}.
    return solve_adjoint(xbar).image;
  }
  const std::size_t rows = xbar.rows();
  const std::size_t cols = xbar.cols();
  const std::size_t n = tape.alpha.size();

  // Cotangents of x_{i+1}, r_{i+1}, p_{i+1}, rr_{i+1} while walking backwards.
  const BasicComplexImage<Real>& x_bar = xbar;
  BasicComplexImage<Real> r_bar(rows, cols);
  BasicComplexImage<Real> p_bar(rows, cols);
  double rr_bar = 0.0;

  for (std::size_t step = n; step-- > 0;) {
    const auto& p = tape.p[step];
    const auto& q = tape.q[step];
    const auto& r_next = tape.r[step];
    const double rr = tape.rr[step];
    const double rr_next = tape.rr[step + 1];
    const double alpha = tape.alpha[step];
    const double pq = tape.pq[step];

    BasicComplexImage<Real> p_bar_cur(rows, cols);
    double rr_bar_cur = 0.0;
    if (step < tape.beta.size()) {
      // p_{i+1} = r_{i+1} + beta p_i ; beta = rr_{i+1} / rr_i
      const double beta = tape.beta[step];
      axpy(r_bar, 1.0, p_bar);
      const double beta_bar = real_inner(p_bar, p);
      p_bar_cur = p_bar;
      scale(p_bar_cur, beta);
      rr_bar += beta_bar / rr;
      rr_bar_cur -= beta_bar * rr_next / (rr * rr);
    }
    // rr_{i+1} = |r_{i+1}|^2
    axpy(r_bar, 2.0 * rr_bar, r_next);
    // x_{i+1} = x_i + alpha p_i
    double alpha_bar = real_inner(x_bar, p);
    axpy(p_bar_cur, alpha, x_bar);
    // r_{i+1} = r_i - alpha q_i
    alpha_bar -= real_inner(r_bar, q);
    BasicComplexImage<Real> q_bar = r_bar;
    scale(q_bar, -alpha);
    // alpha = rr_i / pq_i
    rr_bar_cur += alpha_bar / pq;
    const double pq_bar = -alpha_bar * rr / (pq * pq);
    // pq = <p, q>
    axpy(p_bar_cur, pq_bar, q);
    axpy(q_bar, pq_bar, p);
    // q = M p (M symmetric)
    axpy(p_bar_cur, 1.0, normal(q_bar));

    p_bar = std::move(p_bar_cur);
    rr_bar = rr_bar_cur;
  }

  // p_0 = r_0 ; rr_0 = |r_0|^2 ; r_0 = b - M x_0 ; x_0 = z ; b = A^H y + lambda z
  if (n > 0) axpy(r_bar, 1.0, p_bar);
  axpy(r_bar, 2.0 * rr_bar, tape.r0);
  auto z_bar = x_bar;
  axpy(z_bar, -1.0, normal(r_bar));
  axpy(z_bar, lambda_, r_bar);
  return z_bar;
}

template <typename Real>
DcResult<Real> data_consistency(const BasicComplexImage<Real>& z, const BasicComplexImage<Real>& y,
                                const SamplingMask& m, double lambda, CgSettings cg) {
  require_same_shape(z, y, "data_consistency");
  return DataConsistency<Real>(y, m, lambda, cg).solve(z);
}

#define FEDRECON_INSTANTIATE(Real)                                                                              \
  template void apply_mask(BasicComplexImage<Real>&, const SamplingMask&);                                     \
  template BasicComplexImage<Real> forward_encode(const BasicComplexImage<Real>&, const SamplingMask&);        \
  template BasicComplexImage<Real> forward_encode(const BasicComplexImage<Real>&, const SamplingMask&, double, \
                                                  CounterRng&);                                                \
  template BasicComplexImage<Real> adjoint(const BasicComplexImage<Real>&, const SamplingMask&);               \
  template class DataConsistency<Real>;                                                                        \
  template DcResult<Real> data_consistency(const BasicComplexImage<Real>&, const BasicComplexImage<Real>&,     \
                                           const SamplingMask&, double, CgSettings);

FEDRECON_INSTANTIATE(float)
FEDRECON_INSTANTIATE(double)

#undef FEDRECON_INSTANTIATE

}  // namespace fedrecon
