#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedrecon/errors.hpp"

namespace fedrecon {

// Row-major 2-D complex array. Used for both image-domain and k-space data.
template <typename Real>
class BasicComplexImage {
 public:
  using real_type = Real;
  using value_type = std::complex<Real>;

  BasicComplexImage() = default;

  BasicComplexImage(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {
    if (rows == 0 || cols == 0) throw ShapeError("ComplexImage dimensions must be positive");
  }

  BasicComplexImage(std::size_t rows, std::size_t cols, std::vector<value_type> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows == 0 || cols == 0) throw ShapeError("ComplexImage dimensions must be positive");
    if (data_.size() != rows * cols) throw ShapeError("ComplexImage data length does not match rows*cols");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  value_type& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const value_type& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  value_type& operator[](std::size_t i) noexcept { return data_[i]; }
  const value_type& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<value_type> data() noexcept { return data_; }
  std::span<const value_type> data() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  bool same_shape(const BasicComplexImage& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const BasicComplexImage&, const BasicComplexImage&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<value_type> data_;
};

using ComplexImage = BasicComplexImage<float>;
using ComplexImageD = BasicComplexImage<double>;

template <typename Real>
void require_same_shape(const BasicComplexImage<Real>& a, const BasicComplexImage<Real>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " does not match " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

template <typename To, typename From>
BasicComplexImage<To> image_cast(const BasicComplexImage<From>& x) {
  BasicComplexImage<To> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::complex<To>(static_cast<To>(x[i].real()), static_cast<To>(x[i].imag()));
  }
  return out;
}

// Sum of |x_i|^2, accumulated in double.
template <typename Real>
double squared_norm(const BasicComplexImage<Real>& x) noexcept {
  double s = 0.0;
  for (const auto& v : x) {
    s += static_cast<double>(v.real()) * v.real() + static_cast<double>(v.imag()) * v.imag();
  }
  return s;
}

template <typename Real>
double norm(const BasicComplexImage<Real>& x) noexcept {
  return std::sqrt(squared_norm(x));
}

// <a, b> = sum conj(a_i) b_i
template <typename Real>
std::complex<double> inner(const BasicComplexImage<Real>& a, const BasicComplexImage<Real>& b) {
  require_same_shape(a, b, "inner");
  std::complex<double> s{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += std::conj(std::complex<double>(a[i])) * std::complex<double>(b[i]);
  }
  return s;
}

// Re<a, b>: the real inner product of the underlying 2N-dimensional vectors.
template <typename Real>
double real_inner(const BasicComplexImage<Real>& a, const BasicComplexImage<Real>& b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += static_cast<double>(a[i].real()) * b[i].real() + static_cast<double>(a[i].imag()) * b[i].imag();
  }
  return s;
}

template <typename Real>
bool all_finite(const BasicComplexImage<Real>& x) noexcept {
  for (const auto& v : x) {
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
  }
  return true;
}

}  // namespace fedrecon
