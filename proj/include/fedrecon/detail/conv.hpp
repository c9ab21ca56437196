#pragma once

#include <span>
#include <vector>

namespace fedrecon::detail {

// 'Same' 2-D convolution (cross-correlation), stride 1, zero padding, odd kernel.
// Tensors are planar: [channels][height][width]. Weights are [out][in][k][k].
struct ConvShape {
  int in_channels;
  int out_channels;
  int kernel;
  int height;
  int width;
};

template <typename Real>
void conv2d_forward(const ConvShape& s, std::span<const Real> in, std::span<const Real> weight,
                    std::span<const Real> bias, std::span<Real> out);

// Accumulates into grad_weight / grad_bias; overwrites grad_in unless it is empty.
template <typename Real>
void conv2d_backward(const ConvShape& s, std::span<const Real> in, std::span<const Real> weight,
                     std::span<const Real> grad_out, std::span<Real> grad_in, std::span<Real> grad_weight,
                     std::span<Real> grad_bias);

}  // namespace fedrecon::detail
