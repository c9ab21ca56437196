#include "fedrecon/selfsup.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "fedrecon/fft.hpp"

namespace fedrecon {
namespace {

SamplingMask keep_subset(const SamplingMask& omega, std::vector<std::size_t> pool, std::size_t keep,
                         CounterRng& rng) {
  SamplingMask m = omega;
  m.lines.assign(omega.cols, 0);
  for (std::size_t c = omega.center_begin; c < omega.center_end; ++c) m.lines[c] = 1;
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
    m.lines[pool[i]] = 1;
  }
  m.acceleration = static_cast<double>(m.cols) / static_cast<double>(m.sampled_count());
  return m;
}

template <typename Real>
void check_pair(const ParamPair<Real>& p) {
  if (p.a.size() != p.a.config.param_count() || p.b.size() != p.b.config.param_count()) {
    throw ShapeError("branch parameter vector does not match its config");
  }
  if (!(p.a.config == p.b.config)) throw ShapeError("branches of a pair use different denoiser configs");
}

}  // namespace

MaskSplit split_mask(const SamplingMask& omega, double rho, CounterRng& rng) {
  omega.validate();
  if (!(rho > 0.0) || rho > 1.0) throw ConfigError("split rho must lie in (0, 1], got " + std::to_string(rho));
  std::vector<std::size_t> pool;
  for (std::size_t c = 0; c < omega.cols; ++c) {
    if (omega.sampled(c) && !omega.in_center(c)) pool.push_back(c);
  }
  const auto keep = static_cast<std::size_t>(std::llround(rho * static_cast<double>(pool.size())));
  if (keep < 1) {
    throw ConfigError("split rho " + std::to_string(rho) + " keeps no non-center line out of " +
                      std::to_string(pool.size()));
  }
  MaskSplit s;
  s.omega = omega;
  s.split_rho = rho;
  s.psi = keep_subset(omega, pool, keep, rng);
  s.lambda_mask = keep_subset(omega, pool, keep, rng);
  return s;
}

template <typename Real>
void require_compatible(const ParamPair<Real>& x, const ParamPair<Real>& y, const char* what) {
  check_pair(x);
  check_pair(y);
  if (!(x.a.config == y.a.config)) throw ShapeError(std::string(what) + ": parameter configs differ");
}

template <typename Real>
double distance(const ParamPair<Real>& x, const ParamPair<Real>& y) {
  require_compatible(x, y, "distance");
  double s = 0.0;
  for (const auto* pv : {&x.a, &x.b}) {
    const auto& other = pv == &x.a ? y.a : y.b;
    for (std::size_t i = 0; i < pv->size(); ++i) {
      const double d = static_cast<double>(pv->values[i]) - static_cast<double>(other.values[i]);
      s += d * d;
    }
  }
  return std::sqrt(s);
}

template <typename Real>
void RmsProp::step(std::vector<Real>& theta, std::span<const Real> grad, std::vector<Real>& state, double lr) const {
  if (theta.size() != grad.size() || state.size() != theta.size()) throw ShapeError("RMSProp operand sizes differ");
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    const double s = alpha * static_cast<double>(state[i]) + (1.0 - alpha) * g * g;
    state[i] = static_cast<Real>(s);
    theta[i] = static_cast<Real>(static_cast<double>(theta[i]) - lr * g / (std::sqrt(s) + eps));
  }
}

template <typename Real>
BranchPair<Real> init_branches(const DenoiserConfig& config, CounterRng& rng) {
  CounterRng ra = rng.derive(0);
  CounterRng rb = rng.derive(1);
  return BranchPair<Real>(ParamPair<Real>{init_params<Real>(config, ra), init_params<Real>(config, rb)});
}

template <typename Real>
LossComponents recon_loss(const BasicComplexImage<Real>& pred_a_k, const BasicComplexImage<Real>& pred_b_k,
                          const BasicComplexImage<Real>& y_omega, const SamplingMask& omega, double gamma,
                          BasicComplexImage<Real>* grad_a, BasicComplexImage<Real>* grad_b, double scale) {
  require_same_shape(pred_a_k, pred_b_k, "recon_loss");
  require_same_shape(pred_a_k, y_omega, "recon_loss");
  if (y_omega.rows() != omega.rows || y_omega.cols() != omega.cols) throw ShapeError("recon_loss: mask shape");
  if (grad_a) *grad_a = BasicComplexImage<Real>(y_omega.rows(), y_omega.cols());
  if (grad_b) *grad_b = BasicComplexImage<Real>(y_omega.rows(), y_omega.cols());

  LossComponents out;
  const auto sq = [](std::complex<double> v) { return v.real() * v.real() + v.imag() * v.imag(); };
  for (std::size_t r = 0; r < y_omega.rows(); ++r) {
    for (std::size_t c = 0; c < y_omega.cols(); ++c) {
      const std::complex<double> a(pred_a_k(r, c));
      const std::complex<double> b(pred_b_k(r, c));
      if (omega.sampled(c)) {
        const std::complex<double> y(y_omega(r, c));
        out.uc += sq(a - y) + sq(b - y);
        if (grad_a) (*grad_a)(r, c) = std::complex<Real>(2.0 * scale * (a - y));
        if (grad_b) (*grad_b)(r, c) = std::complex<Real>(2.0 * scale * (b - y));
      } else {
        out.cc += sq(a - b);
        if (grad_a) (*grad_a)(r, c) = std::complex<Real>(2.0 * scale * gamma * (a - b));
        if (grad_b) (*grad_b)(r, c) = std::complex<Real>(2.0 * scale * gamma * (b - a));
      }
    }
  }
  out.total = out.uc + gamma * out.cc;
  return out;
}

template <typename Real>
double total_local_loss(double l_rec, const ParamPair<Real>& theta_k, const ParamPair<Real>& theta_g, double tau) {
  if (!(tau >= 0.0)) throw DomainError("tau must be non-negative");
  const double d = distance(theta_k, theta_g);
  return l_rec + 0.5 * tau * d * d;
}

template <typename Real>
LossAndGrad<Real> local_loss(const ParamPair<Real>& theta_k, const ParamPair<Real>& theta_g, const MaskSplit& split,
                             std::span<const BasicComplexImage<Real>> batch, const LocalHyper& hyper,
                             const UnrollConfig& uc, bool with_grad) {
  require_compatible(theta_k, theta_g, "local_loss");
  if (batch.empty()) throw ConfigError("local training batch is empty");
  LossAndGrad<Real> out;
  if (with_grad) out.grad = ParamPair<Real>{BasicParamVector<Real>(theta_k.a.config), BasicParamVector<Real>(theta_k.b.config)};
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  for (const auto& y : batch) {
    auto y_psi = y;
    apply_mask(y_psi, split.psi);
    auto y_lambda = y;
    apply_mask(y_lambda, split.lambda_mask);

    UnrollTape<Real> tape_a;
    UnrollTape<Real> tape_b;
    auto rec_a = unrolled_reconstruct(theta_k.a, y_psi, split.psi, uc, with_grad ? &tape_a : nullptr);
    auto rec_b = unrolled_reconstruct(theta_k.b, y_lambda, split.lambda_mask, uc, with_grad ? &tape_b : nullptr);
    out.record.telemetry.merge(rec_a.telemetry);
    out.record.telemetry.merge(rec_b.telemetry);
    const auto k_a = fft2c(rec_a.image);
    const auto k_b = fft2c(rec_b.image);

    BasicComplexImage<Real> gk_a;
    BasicComplexImage<Real> gk_b;
    const auto parts = recon_loss(k_a, k_b, y, split.omega, hyper.gamma, with_grad ? &gk_a : nullptr,
                                  with_grad ? &gk_b : nullptr, inv_batch);
    out.record.loss_rec += parts.total * inv_batch;
    out.record.loss_uc += parts.uc * inv_batch;
    out.record.loss_cc += parts.cc * inv_batch;

    if (with_grad) {
      // F is unitary, so the image-domain cotangent is F^H of the k-space one.
      auto ga = unrolled_backward(theta_k.a, y_psi, split.psi, uc, tape_a, ifft2c(gk_a), &out.record.telemetry);
      auto gb = unrolled_backward(theta_k.b, y_lambda, split.lambda_mask, uc, tape_b, ifft2c(gk_b),
                                  &out.record.telemetry);
      for (std::size_t i = 0; i < ga.size(); ++i) out.grad.a.values[i] += ga.values[i];
      for (std::size_t i = 0; i < gb.size(); ++i) out.grad.b.values[i] += gb.values[i];
    }
  }

  if (hyper.tau > 0.0) {
    const double d = distance(theta_k, theta_g);
    out.record.prox = 0.5 * hyper.tau * d * d;
    if (with_grad) {
      const auto tau = static_cast<Real>(hyper.tau);
      for (std::size_t i = 0; i < theta_k.a.size(); ++i) {
        out.grad.a.values[i] += tau * (theta_k.a.values[i] - theta_g.a.values[i]);
      }
      for (std::size_t i = 0; i < theta_k.b.size(); ++i) {
        out.grad.b.values[i] += tau * (theta_k.b.values[i] - theta_g.b.values[i]);
      }
    }
  } else if (hyper.tau < 0.0) {
    throw DomainError("tau must be non-negative");
  }
  out.record.loss_total = out.record.loss_rec + out.record.prox;
  return out;
}

template <typename Real>
StepRecord local_train_step(BranchPair<Real>& branches, const ParamPair<Real>& theta_g, const MaskSplit& split,
                            std::span<const BasicComplexImage<Real>> batch, const LocalHyper& hyper,
                            const UnrollConfig& uc) {
  auto lg = local_loss(branches.params, theta_g, split, batch, hyper, uc, true);
  if (!std::isfinite(lg.record.loss_total) || !lg.grad.all_finite()) {
    std::ostringstream msg;
    msg << "non-finite local loss: total=" << lg.record.loss_total << " uc=" << lg.record.loss_uc
        << " cc=" << lg.record.loss_cc << " prox=" << lg.record.prox
        << " finite_grad=" << (lg.grad.all_finite() ? "yes" : "no");
    throw NonFiniteLoss(msg.str());
  }
  hyper.optimizer.step(branches.params.a.values, std::span<const Real>(lg.grad.a.values), branches.rms_a, hyper.lr);
  hyper.optimizer.step(branches.params.b.values, std::span<const Real>(lg.grad.b.values), branches.rms_b, hyper.lr);
  return lg.record;
}

template <typename Real>
StepRecord local_train_step(BranchPair<Real>& branches, const ParamPair<Real>& theta_g, const SamplingMask& omega,
                            std::span<const BasicComplexImage<Real>> batch, const LocalHyper& hyper,
                            const UnrollConfig& uc, CounterRng& rng) {
  const auto split = split_mask(omega, hyper.split_rho, rng);
  return local_train_step(branches, theta_g, split, batch, hyper, uc);
}

template <typename Real>
BasicComplexImage<Real> infer(const ParamPair<Real>& theta, const BasicComplexImage<Real>& y_omega,
                              const SamplingMask& omega, const UnrollConfig& uc, InferMode mode) {
  auto a = unrolled_reconstruct(theta.a, y_omega, omega, uc).image;
  if (mode == InferMode::branch_a) return a;
  const auto b = unrolled_reconstruct(theta.b, y_omega, omega, uc).image;
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = Real(0.5) * (a[i] + b[i]);
  return a;
}

#define FEDRECON_INSTANTIATE(Real)                                                                                  \
  template void require_compatible(const ParamPair<Real>&, const ParamPair<Real>&, const char*);                  \
  template double distance(const ParamPair<Real>&, const ParamPair<Real>&);                                        \
  template void RmsProp::step(std::vector<Real>&, std::span<const Real>, std::vector<Real>&, double) const;         \
  template BranchPair<Real> init_branches(const DenoiserConfig&, CounterRng&);                                     \
  template LossComponents recon_loss(const BasicComplexImage<Real>&, const BasicComplexImage<Real>&,               \
                                     const BasicComplexImage<Real>&, const SamplingMask&, double,                  \
                                     BasicComplexImage<Real>*, BasicComplexImage<Real>*, double);                  \
  template double total_local_loss(double, const ParamPair<Real>&, const ParamPair<Real>&, double);                \
  template LossAndGrad<Real> local_loss(const ParamPair<Real>&, const ParamPair<Real>&, const MaskSplit&,          \
                                        std::span<const BasicComplexImage<Real>>, const LocalHyper&,               \
                                        const UnrollConfig&, bool);                                                \
  template StepRecord local_train_step(BranchPair<Real>&, const ParamPair<Real>&, const MaskSplit&,                \
                                       std::span<const BasicComplexImage<Real>>, const LocalHyper&,                \
                                       const UnrollConfig&);                                                       \
  template StepRecord local_train_step(BranchPair<Real>&, const ParamPair<Real>&, const SamplingMask&,             \
                                       std::span<const BasicComplexImage<Real>>, const LocalHyper&,                \
                                       const UnrollConfig&, CounterRng&);                                          \
  template BasicComplexImage<Real> infer(const ParamPair<Real>&, const BasicComplexImage<Real>&,                   \
                                         const SamplingMask&, const UnrollConfig&, InferMode);

FEDRECON_INSTANTIATE(float)
FEDRECON_INSTANTIATE(double)

#undef FEDRECON_INSTANTIATE

}  // namespace fedrecon
