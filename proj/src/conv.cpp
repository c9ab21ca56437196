#include "fedrecon/detail/conv.hpp"

#include <Eigen/Core>

#include <algorithm>

namespace fedrecon::detail {
namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// columns[(c, ky, kx)][y * w + x] = in[c][y + ky - pad][x + kx - pad] (zero outside)
template <typename Real>
void im2col(const ConvShape& s, std::span<const Real> in, RowMat<Real>& cols) {
  const int k = s.kernel;
  const int pad = k / 2;
  const int h = s.height;
  const int w = s.width;
  cols.resize(static_cast<Eigen::Index>(s.in_channels) * k * k, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < s.in_channels; ++c) {
    const Real* src = in.data() + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Real* dst = cols.row((c * k + ky) * k + kx).data();
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          Real* row = dst + static_cast<std::size_t>(y) * w;
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, Real(0));
            continue;
          }
          const Real* srow = src + static_cast<std::size_t>(sy) * w;
          std::fill(row, row + x0, Real(0));
          for (int x = x0; x < x1; ++x) row[x] = srow[x + dx];
          std::fill(row + x1, row + w, Real(0));
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back onto the image.
template <typename Real>
void col2im(const ConvShape& s, const RowMat<Real>& cols, std::span<Real> out) {
  const int k = s.kernel;
  const int pad = k / 2;
  const int h = s.height;
  const int w = s.width;
  std::fill(out.begin(), out.end(), Real(0));
  for (int c = 0; c < s.in_channels; ++c) {
    Real* dst = out.data() + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Real* src = cols.row((c * k + ky) * k + kx).data();
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const Real* row = src + static_cast<std::size_t>(y) * w;
          Real* drow = dst + static_cast<std::size_t>(sy) * w;
          for (int x = x0; x < x1; ++x) drow[x + dx] += row[x];
        }
      }
    }
  }
}

}  // namespace

template <typename Real>
void conv2d_forward(const ConvShape& s, std::span<const Real> in, std::span<const Real> weight,
                    std::span<const Real> bias, std::span<Real> out) {
  const Eigen::Index taps = static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel;
  const Eigen::Index pixels = static_cast<Eigen::Index>(s.height) * s.width;
  thread_local RowMat<Real> cols;
  im2col(s, in, cols);
  Eigen::Map<const RowMat<Real>> wmat(weight.data(), s.out_channels, taps);
  Eigen::Map<RowMat<Real>> omat(out.data(), s.out_channels, pixels);
  omat.noalias() = wmat * cols;
  for (int o = 0; o < s.out_channels; ++o) omat.row(o).array() += bias[static_cast<std::size_t>(o)];
}

template <typename Real>
void conv2d_backward(const ConvShape& s, std::span<const Real> in, std::span<const Real> weight,
                     std::span<const Real> grad_out, std::span<Real> grad_in, std::span<Real> grad_weight,
                     std::span<Real> grad_bias) {
  const Eigen::Index taps = static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel;
  const Eigen::Index pixels = static_cast<Eigen::Index>(s.height) * s.width;
  thread_local RowMat<Real> cols;
  im2col(s, in, cols);
  Eigen::Map<const RowMat<Real>> g(grad_out.data(), s.out_channels, pixels);
  Eigen::Map<RowMat<Real>> gw(grad_weight.data(), s.out_channels, taps);
  gw.noalias() += g * cols.transpose();
  for (int o = 0; o < s.out_channels; ++o) {
    const Real* row = g.row(o).data();
    Real acc = 0;
    for (Eigen::Index i = 0; i < pixels; ++i) acc += row[i];
    grad_bias[static_cast<std::size_t>(o)] += acc;
  }
  if (!grad_in.empty()) {
    Eigen::Map<const RowMat<Real>> wmat(weight.data(), s.out_channels, taps);
    RowMat<Real> gcols = wmat.transpose() * g;
    col2im(s, gcols, grad_in);
  }
}

template void conv2d_forward<float>(const ConvShape&, std::span<const float>, std::span<const float>,
                                    std::span<const float>, std::span<float>);
template void conv2d_forward<double>(const ConvShape&, std::span<const double>, std::span<const double>,
                                     std::span<const double>, std::span<double>);
template void conv2d_backward<float>(const ConvShape&, std::span<const float>, std::span<const float>,
                                     std::span<const float>, std::span<float>, std::span<float>, std::span<float>);
template void conv2d_backward<double>(const ConvShape&, std::span<const double>, std::span<const double>,
                                      std::span<const double>, std::span<double>, std::span<double>,
                                      std::span<double>);

}  // namespace fedrecon::detail
