#include "fedrecon/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedrecon/detail/conv.hpp"

namespace fedrecon {
namespace {

template <typename Real>
std::vector<Real> to_planes(const BasicComplexImage<Real>& x) {
  const std::size_t n = x.size();
  std::vector<Real> p(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = x[i].real();
    p[n + i] = x[i].imag();
  }
  return p;
}

void check_theta(const DenoiserConfig& config, std::size_t size) {
  if (size != config.param_count()) {
    throw ShapeError("parameter vector of length " + std::to_string(size) + " does not match config (expected " +
                     std::to_string(config.param_count()) + ")");
  }
}

detail::ConvShape shape_of(const DenoiserConfig::Layer& l, const DenoiserConfig& c, std::size_t rows,
                           std::size_t cols) {
  return {l.in_channels, l.out_channels, c.kernel, static_cast<int>(rows), static_cast<int>(cols)};
}

// Returns activations [input, hidden..., output]; hidden entries are post-ReLU.
template <typename Real>
std::vector<std::vector<Real>> net_forward(const BasicParamVector<Real>& theta, std::vector<Real> input,
                                           std::size_t rows, std::size_t cols) {
  const auto layers = theta.config.layout();
  const std::size_t pixels = rows * cols;
  const std::span<const Real> params(theta.values);
  std::vector<std::vector<Real>> acts;
  acts.reserve(layers.size() + 1);
  acts.push_back(std::move(input));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const auto s = shape_of(L, theta.config, rows, cols);
    std::vector<Real> out(static_cast<std::size_t>(L.out_channels) * pixels);
    const std::size_t wcount = static_cast<std::size_t>(L.in_channels) * L.out_channels * s.kernel * s.kernel;
    detail::conv2d_forward<Real>(s, acts.back(), params.subspan(L.weight_offset, wcount),
                                 params.subspan(L.bias_offset, static_cast<std::size_t>(L.out_channels)), out);
    if (l + 1 < layers.size()) {
      for (auto& v : out) v = std::max(v, Real(0));
    }
    acts.push_back(std::move(out));
  }
  return acts;
}

// Back-propagates `grad_out` (cotangent of the network output) and accumulates
// parameter gradients into `grad`. Returns the cotangent of the input planes.
template <typename Real>
std::vector<Real> net_backward(const BasicParamVector<Real>& theta, const std::vector<std::vector<Real>>& acts,
                               std::vector<Real> grad_out, std::size_t rows, std::size_t cols,
                               std::vector<Real>& grad) {
  const auto layers = theta.config.layout();
  const std::size_t pixels = rows * cols;
  const std::span<const Real> params(theta.values);
  const std::span<Real> g(grad);
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& L = layers[l];
    const auto s = shape_of(L, theta.config, rows, cols);
    if (l + 1 < layers.size()) {
      // ReLU: pass gradient only where the activation was positive.
      const auto& a = acts[l + 1];
      for (std::size_t i = 0; i < grad_out.size(); ++i) {
        if (!(a[i] > Real(0))) grad_out[i] = Real(0);
      }
    }
    const std::size_t wcount = static_cast<std::size_t>(L.in_channels) * L.out_channels * s.kernel * s.kernel;
    std::vector<Real> grad_in(static_cast<std::size_t>(L.in_channels) * pixels);
    detail::conv2d_backward<Real>(s, acts[l], params.subspan(L.weight_offset, wcount), grad_out, grad_in,
                                  g.subspan(L.weight_offset, wcount),
                                  g.subspan(L.bias_offset, static_cast<std::size_t>(L.out_channels)));
    grad_out = std::move(grad_in);
  }
  return grad_out;
}

}  // namespace

void DenoiserConfig::validate() const {
  if (layers < 2) throw ConfigError("denoiser needs at least 2 layers");
  if (filters < 1) throw ConfigError("denoiser filters must be positive");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("denoiser kernel must be a positive odd integer");
}

std::vector<DenoiserConfig::Layer> DenoiserConfig::layout() const {
  validate();
  std::vector<Layer> out;
  std::size_t offset = 0;
  for (int l = 0; l < layers; ++l) {
    Layer L{};
    L.in_channels = l == 0 ? kChannels : filters;
    L.out_channels = l == layers - 1 ? kChannels : filters;
    L.weight_offset = offset;
    offset += static_cast<std::size_t>(L.in_channels) * L.out_channels * kernel * kernel;
    L.bias_offset = offset;
    offset += static_cast<std::size_t>(L.out_channels);
    out.push_back(L);
  }
  return out;
}

std::size_t DenoiserConfig::param_count() const {
  validate();
  const auto f = static_cast<std::size_t>(filters);
  const auto k2 = static_cast<std::size_t>(kernel) * static_cast<std::size_t>(kernel);
  const auto hidden = static_cast<std::size_t>(layers - 2);
  const std::size_t weights = k2 * (kChannels * f + hidden * f * f + f * kChannels);
  const std::size_t biases = static_cast<std::size_t>(layers - 1) * f + kChannels;
  return weights + biases;
}

std::uint64_t DenoiserConfig::hash() const {
  // FNV-1a over the defining fields.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int v : {layers, filters, kernel, kChannels}) {
    for (int b = 0; b < 4; ++b) {
      h ^= static_cast<std::uint64_t>((static_cast<std::uint32_t>(v) >> (8 * b)) & 0xffU);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

template <typename Real>
BasicParamVector<Real>::BasicParamVector(const DenoiserConfig& c, std::vector<Real> v) : config(c), values(std::move(v)) {
  check_theta(config, values.size());
}

template <typename Real>
bool BasicParamVector<Real>::all_finite() const noexcept {
  return std::all_of(values.begin(), values.end(), [](Real v) { return std::isfinite(v); });
}

void UnrollConfig::validate() const {
  if (iterations < 1) throw ConfigError("unroll iterations must be >= 1");
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (cg.max_iter < 1 || !(cg.tol >= 0.0)) throw ConfigError("invalid CG settings");
}

void ReconTelemetry::merge(const ReconTelemetry& o) {
  cg_solves += o.cg_solves;
  cg_iterations += o.cg_iterations;
  cg_warnings += o.cg_warnings;
  worst_residual = std::max(worst_residual, o.worst_residual);
}

template <typename Real>
BasicParamVector<Real> init_params(const DenoiserConfig& config, CounterRng& rng) {
  BasicParamVector<Real> theta(config);
  const auto layout = config.layout();
  for (const auto& L : layout) {
    const double fan_in = static_cast<double>(L.in_channels) * config.kernel * config.kernel;
    const double sd = std::sqrt(2.0 / fan_in) * (&L == &layout.back() ? kOutputInitScale : 1.0);
    for (std::size_t i = L.weight_offset; i < L.bias_offset; ++i) {
      theta.values[i] = static_cast<Real>(sd * rng.normal());
    }
  }
  return theta;
}

template <typename Real>
BasicComplexImage<Real> denoise(const BasicParamVector<Real>& theta, const BasicComplexImage<Real>& x) {
  check_theta(theta.config, theta.size());
  const auto acts = net_forward(theta, to_planes(x), x.rows(), x.cols());
  const auto& n = acts.back();
  const std::size_t pixels = x.size();
  BasicComplexImage<Real> z(x.rows(), x.cols());
  for (std::size_t i = 0; i < pixels; ++i) z[i] = x[i] - std::complex<Real>(n[i], n[pixels + i]);
  return z;
}

template <typename Real>
Reconstruction<Real> unrolled_reconstruct(const BasicParamVector<Real>& theta, const BasicComplexImage<Real>& y,
                                          const SamplingMask& m, const UnrollConfig& uc, UnrollTape<Real>* tape) {
  check_theta(theta.config, theta.size());
  uc.validate();
  const DataConsistency<Real> dc(y, m, uc.lambda, uc.cg);
  Reconstruction<Real> rec;
  rec.image = dc.zero_filled();
  const std::size_t pixels = y.size();
  if (tape) tape->iterations.assign(static_cast<std::size_t>(uc.iterations), {});

  for (int n = 0; n < uc.iterations; ++n) {
    auto& x = rec.image;
    auto acts = net_forward(theta, to_planes(x), x.rows(), x.cols());
    BasicComplexImage<Real> z(x.rows(), x.cols());
    const auto& out = acts.back();
    for (std::size_t i = 0; i < pixels; ++i) z[i] = x[i] - std::complex<Real>(out[i], out[pixels + i]);

    CgTape<Real>* cg_tape = nullptr;
    if (tape) {
      auto& it = tape->iterations[static_cast<std::size_t>(n)];
      acts.pop_back();
      it.activations = std::move(acts);
      if (uc.dc_gradient == DcGradient::unrolled) cg_tape = &it.cg;
    }
    auto solved = dc.solve(z, cg_tape);
    rec.telemetry.cg_solves += 1;
    rec.telemetry.cg_iterations += solved.iterations;
    if (!solved.converged) rec.telemetry.cg_warnings += 1;
    rec.telemetry.worst_residual = std::max(rec.telemetry.worst_residual, solved.relative_residual);
    rec.image = std::move(solved.image);
  }
  return rec;
}

template <typename Real>
BasicParamVector<Real> unrolled_backward(const BasicParamVector<Real>& theta, const BasicComplexImage<Real>& y,
                                         const SamplingMask& m, const UnrollConfig& uc, const UnrollTape<Real>& tape,
                                         const BasicComplexImage<Real>& upstream, ReconTelemetry* telemetry) {
  check_theta(theta.config, theta.size());
  require_same_shape(upstream, y, "unrolled_backward");
  if (tape.iterations.size() != static_cast<std::size_t>(uc.iterations)) {
    throw ShapeError("unroll tape does not match the configured iteration count");
  }
  const DataConsistency<Real> dc(y, m, uc.lambda, uc.cg);
  BasicParamVector<Real> grad(theta.config);
  const std::size_t pixels = y.size();
  auto xbar = upstream;

  for (std::size_t n = tape.iterations.size(); n-- > 0;) {
    const auto& it = tape.iterations[n];
    BasicComplexImage<Real> zbar;
    if (uc.dc_gradient == DcGradient::unrolled) {
      zbar = dc.backprop_tape(it.cg, xbar);
    } else {
      auto solved = dc.solve_adjoint(xbar);
      if (telemetry) {
        telemetry->cg_solves += 1;
        telemetry->cg_iterations += solved.iterations;
        if (!solved.converged) telemetry->cg_warnings += 1;
        telemetry->worst_residual = std::max(telemetry->worst_residual, solved.relative_residual);
      }
      zbar = std::move(solved.image);
    }
    // z = x - N(x)
    std::vector<Real> gout(2 * pixels);
    for (std::size_t i = 0; i < pixels; ++i) {
      gout[i] = -zbar[i].real();
      gout[pixels + i] = -zbar[i].imag();
    }
    const auto gin = net_backward(theta, it.activations, std::move(gout), y.rows(), y.cols(), grad.values);
    for (std::size_t i = 0; i < pixels; ++i) zbar[i] += std::complex<Real>(gin[i], gin[pixels + i]);
    xbar = std::move(zbar);
  }
  return grad;
}

template <typename Real>
BasicParamVector<Real> grad_reconstruct(const BasicParamVector<Real>& theta, const BasicComplexImage<Real>& y,
                                        const SamplingMask& m, const UnrollConfig& uc,
                                        const BasicComplexImage<Real>& upstream) {
  UnrollTape<Real> tape;
  unrolled_reconstruct(theta, y, m, uc, &tape);
  return unrolled_backward(theta, y, m, uc, tape, upstream);
}

#define FEDRECON_INSTANTIATE(Real)                                                                               \
  template struct BasicParamVector<Real>;                                                                       \
  template BasicParamVector<Real> init_params(const DenoiserConfig&, CounterRng&);                              \
  template BasicComplexImage<Real> denoise(const BasicParamVector<Real>&, const BasicComplexImage<Real>&);     \
  template Reconstruction<Real> unrolled_reconstruct(const BasicParamVector<Real>&,                            \
                                                     const BasicComplexImage<Real>&, const SamplingMask&,      \
                                                     const UnrollConfig&, UnrollTape<Real>*);                  \
  template BasicParamVector<Real> unrolled_backward(const BasicParamVector<Real>&, const BasicComplexImage<Real>&, \
                                                    const SamplingMask&, const UnrollConfig&,                  \
                                                    const UnrollTape<Real>&, const BasicComplexImage<Real>&,    \
                                                    ReconTelemetry*);                                          \
  template BasicParamVector<Real> grad_reconstruct(const BasicParamVector<Real>&, const BasicComplexImage<Real>&, \
                                                   const SamplingMask&, const UnrollConfig&,                   \
                                                   const BasicComplexImage<Real>&);

FEDRECON_INSTANTIATE(float)
FEDRECON_INSTANTIATE(double)

#undef FEDRECON_INSTANTIATE

}  // namespace fedrecon
