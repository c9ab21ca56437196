#pragma once

#include <span>
#include <vector>

#include "fedrecon/complex_image.hpp"
#include "fedrecon/forward.hpp"
#include "fedrecon/model.hpp"
#include "fedrecon/rng.hpp"

namespace fedrecon {

// Two re-undersamplings of the acquired mask Omega, one per branch.
struct MaskSplit {
  SamplingMask omega;
  SamplingMask psi;
  SamplingMask lambda_mask;
  double split_rho = 0.0;
};

// Each of psi / lambda keeps Omega's center band plus round(rho * n) of the n
// remaining sampled lines, drawn independently and uniformly without replacement.
MaskSplit split_mask(const SamplingMask& omega, double rho, CounterRng& rng);

// The two contrastive branches' parameters. Distances and norms over a pair are
// taken on the concatenation [a; b].
template <typename Real>
struct ParamPair {
  BasicParamVector<Real> a;
  BasicParamVector<Real> b;

  std::size_t size() const noexcept { return a.size() + b.size(); }
  bool all_finite() const noexcept { return a.all_finite() && b.all_finite(); }

  friend bool operator==(const ParamPair&, const ParamPair&) = default;
};

template <typename Real>
void require_compatible(const ParamPair<Real>& x, const ParamPair<Real>& y, const char* what);

// ||x - y||_2 over the concatenated pair, accumulated in double.
template <typename Real>
double distance(const ParamPair<Real>& x, const ParamPair<Real>& y);

// RMSProp:  s <- alpha s + (1 - alpha) g^2 ;  theta <- theta - lr g / (sqrt(s) + eps)
struct RmsProp {
  double alpha = 0.99;
  double eps = 1e-8;

  template <typename Real>
  void step(std::vector<Real>& theta, std::span<const Real> grad, std::vector<Real>& state, double lr) const;
};

template <typename Real>
struct BranchPair {
  ParamPair<Real> params;
  std::vector<Real> rms_a;
  std::vector<Real> rms_b;

  BranchPair() = default;
  explicit BranchPair(ParamPair<Real> p)
      : params(std::move(p)), rms_a(params.a.size(), Real(0)), rms_b(params.b.size(), Real(0)) {}

  friend bool operator==(const BranchPair&, const BranchPair&) = default;
};

// Independently initialized branches.
template <typename Real>
BranchPair<Real> init_branches(const DenoiserConfig& config, CounterRng& rng);

struct LossComponents {
  double total = 0.0;  // uc + gamma * cc
  double uc = 0.0;     // undersampled consistency, both branches, on Omega
  double cc = 0.0;     // contrastive consistency, off Omega (unweighted)
};

// Dual-branch reconstruction loss on full k-space predictions of both branches.
// When grad_a / grad_b are given they receive `scale` * d(total)/d(pred) as
// conjugate cotangents (dL/dRe + i dL/dIm).
template <typename Real>
LossComponents recon_loss(const BasicComplexImage<Real>& pred_a_k, const BasicComplexImage<Real>& pred_b_k,
                          const BasicComplexImage<Real>& y_omega, const SamplingMask& omega, double gamma,
                          BasicComplexImage<Real>* grad_a = nullptr, BasicComplexImage<Real>* grad_b = nullptr,
                          double scale = 1.0);

// l_rec + (tau / 2) ||theta_g - theta_k||^2
template <typename Real>
double total_local_loss(double l_rec, const ParamPair<Real>& theta_k, const ParamPair<Real>& theta_g, double tau);

struct LocalHyper {
  double gamma = 0.01;
  double tau = 0.01;
  double lr = 1e-4;
  double split_rho = 0.6;
  RmsProp optimizer;
};

struct StepRecord {
  double loss_total = 0.0;  // L_k
  double loss_rec = 0.0;
  double loss_uc = 0.0;
  double loss_cc = 0.0;
  double prox = 0.0;
  ReconTelemetry telemetry;
};

template <typename Real>
struct LossAndGrad {
  StepRecord record;
  ParamPair<Real> grad;
};

// L_k and (optionally) its gradient for one batch of acquired k-space under a fixed split.
// Losses are summed over k-space entries and averaged over the batch.
template <typename Real>
LossAndGrad<Real> local_loss(const ParamPair<Real>& theta_k, const ParamPair<Real>& theta_g, const MaskSplit& split,
                             std::span<const BasicComplexImage<Real>> batch, const LocalHyper& hyper,
                             const UnrollConfig& uc, bool with_grad);

// One RMSProp step per branch under the given split. Throws NonFiniteLoss
// (leaving `branches` untouched) when the loss or gradient is not finite.
template <typename Real>
StepRecord local_train_step(BranchPair<Real>& branches, const ParamPair<Real>& theta_g, const MaskSplit& split,
                            std::span<const BasicComplexImage<Real>> batch, const LocalHyper& hyper,
                            const UnrollConfig& uc);

// Same, drawing a fresh split from `rng`.
template <typename Real>
StepRecord local_train_step(BranchPair<Real>& branches, const ParamPair<Real>& theta_g, const SamplingMask& omega,
                            std::span<const BasicComplexImage<Real>> batch, const LocalHyper& hyper,
                            const UnrollConfig& uc, CounterRng& rng);

enum class InferMode { mean, branch_a };

// Reconstruction from the full acquired data with the trained pair.
template <typename Real>
BasicComplexImage<Real> infer(const ParamPair<Real>& theta, const BasicComplexImage<Real>& y_omega,
                              const SamplingMask& omega, const UnrollConfig& uc, InferMode mode = InferMode::mean);

}  // namespace fedrecon
