#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedrecon/complex_image.hpp"
#include "fedrecon/forward.hpp"
#include "fedrecon/rng.hpp"

namespace fedrecon {

// Residual CNN denoiser: `layers` convolutions, ReLU after all but the last.
// Channel plan is 2 -> filters -> ... -> filters -> 2 (real/imag planes).
struct DenoiserConfig {
  static constexpr int kChannels = 2;

  int layers = 5;
  int filters = 16;
  int kernel = 3;

  struct Layer {
    int in_channels;
    int out_channels;
    std::size_t weight_offset;
    std::size_t bias_offset;
  };

  void validate() const;
  std::vector<Layer> layout() const;
  // k^2 (2F + (L-2) F^2 + 2F) weights + (L-1) F + 2 biases.
  std::size_t param_count() const;
  std::uint64_t hash() const;

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

// Flat parameters of one denoiser branch, bound to the config that shaped them.
template <typename Real>
struct BasicParamVector {
  DenoiserConfig config;
  std::vector<Real> values;

  BasicParamVector() = default;
  explicit BasicParamVector(const DenoiserConfig& c) : config(c), values(c.param_count(), Real(0)) {}
  BasicParamVector(const DenoiserConfig& c, std::vector<Real> v);

  std::size_t size() const noexcept { return values.size(); }
  std::uint64_t config_hash() const { return config.hash(); }
  bool all_finite() const noexcept;

  friend bool operator==(const BasicParamVector&, const BasicParamVector&) = default;
};

using ParamVector = BasicParamVector<float>;
using ParamVectorD = BasicParamVector<double>;

template <typename To, typename From>
BasicParamVector<To> param_cast(const BasicParamVector<From>& p) {
  BasicParamVector<To> out;
  out.config = p.config;
  out.values.assign(p.values.begin(), p.values.end());
  return out;
}

// How the data-consistency solve is differentiated.
enum class DcGradient {
  implicit,  // re-solve the (self-adjoint) normal equations with the cotangent
  unrolled,  // reverse-mode through the recorded CG iterations
};

struct UnrollConfig {
  int iterations = 5;
  double lambda = 0.05;
  CgSettings cg;
  DcGradient dc_gradient = DcGradient::implicit;

  void validate() const;

  friend bool operator==(const UnrollConfig&, const UnrollConfig&) = default;
};

// The output convolution starts near zero so an untrained network is close to the
// identity map and the first updates do not swamp the zero-filled input.
inline constexpr double kOutputInitScale = 0.1;

// He-normal weights (std sqrt(2 / fan_in)), the last layer scaled by kOutputInitScale; zero biases.
template <typename Real>
BasicParamVector<Real> init_params(const DenoiserConfig& config, CounterRng& rng);

// z = x - N_theta(x)
template <typename Real>
BasicComplexImage<Real> denoise(const BasicParamVector<Real>& theta, const BasicComplexImage<Real>& x);

struct ReconTelemetry {
  int cg_solves = 0;
  int cg_iterations = 0;
  int cg_warnings = 0;  // solves that hit max_iter before reaching tol
  double worst_residual = 0.0;

  void merge(const ReconTelemetry& o);
};

template <typename Real>
struct Reconstruction {
  BasicComplexImage<Real> image;
  ReconTelemetry telemetry;
};

// Everything the reverse pass needs from one unrolled forward pass.
template <typename Real>
struct UnrollTape {
  struct Iteration {
    std::vector<std::vector<Real>> activations;  // [0] = input planes, [l] = post-ReLU output of layer l-1
    CgTape<Real> cg;
  };
  std::vector<Iteration> iterations;
};

// x_0 = A^H y; z_n = denoise(x_n); x_{n+1} = DC(z_n) for n < T, weights shared across iterations.
template <typename Real>
Reconstruction<Real> unrolled_reconstruct(const BasicParamVector<Real>& theta, const BasicComplexImage<Real>& y,
                                          const SamplingMask& m, const UnrollConfig& uc,
                                          UnrollTape<Real>* tape = nullptr);

// Reverse pass for a recorded forward pass. `upstream` is the cotangent of x_T
// (dL/dRe + i dL/dIm). Returns dL/dtheta; DC telemetry of the adjoint solves goes to `telemetry`.
template <typename Real>
BasicParamVector<Real> unrolled_backward(const BasicParamVector<Real>& theta, const BasicComplexImage<Real>& y,
                                         const SamplingMask& m, const UnrollConfig& uc, const UnrollTape<Real>& tape,
                                         const BasicComplexImage<Real>& upstream,
                                         ReconTelemetry* telemetry = nullptr);

template <typename Real>
BasicParamVector<Real> grad_reconstruct(const BasicParamVector<Real>& theta, const BasicComplexImage<Real>& y,
                                        const SamplingMask& m, const UnrollConfig& uc,
                                        const BasicComplexImage<Real>& upstream);

}  // namespace fedrecon
