#pragma once

#include "fedrecon/complex_image.hpp"

namespace fedrecon {

// Centered, unitary 2-D DFT: fftshift(fft2(ifftshift(x))) / sqrt(rows*cols).
// The zero frequency sits at (rows/2, cols/2).
template <typename Real>
BasicComplexImage<Real> fft2c(const BasicComplexImage<Real>& x);

// Inverse of fft2c (and its adjoint, since the transform is unitary).
template <typename Real>
BasicComplexImage<Real> ifft2c(const BasicComplexImage<Real>& k);

}  // namespace fedrecon
