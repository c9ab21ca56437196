#include "fedrecon/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

namespace fedrecon {
namespace {

// The FFTW planner is not thread-safe; execution of an existing plan is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

template <typename Real>
struct Fftw;

template <>
struct Fftw<float> {
  using complex_type = fftwf_complex;
  using plan_type = fftwf_plan;
  static complex_type* alloc(std::size_t n) { return fftwf_alloc_complex(n); }
  static void free(complex_type* p) { fftwf_free(p); }
  static plan_type plan(int r, int c, complex_type* in, complex_type* out, int sign) {
    return fftwf_plan_dft_2d(r, c, in, out, sign, FFTW_ESTIMATE);
  }
  static void execute(plan_type p) { fftwf_execute(p); }
  static void destroy(plan_type p) { fftwf_destroy_plan(p); }
};

template <>
struct Fftw<double> {
  using complex_type = fftw_complex;
  using plan_type = fftw_plan;
  static complex_type* alloc(std::size_t n) { return fftw_alloc_complex(n); }
  static void free(complex_type* p) { fftw_free(p); }
  static plan_type plan(int r, int c, complex_type* in, complex_type* out, int sign) {
    return fftw_plan_dft_2d(r, c, in, out, sign, FFTW_ESTIMATE);
  }
  static void execute(plan_type p) { fftw_execute(p); }
  static void destroy(plan_type p) { fftw_destroy_plan(p); }
};

// A plan bound to its own buffers, so every execution sees identical alignment
// and therefore takes the identical code path.
template <typename Real>
class Plan {
 public:
  using F = Fftw<Real>;

  Plan(std::size_t rows, std::size_t cols, int sign) : n_(rows * cols) {
    in_ = F::alloc(n_);
    out_ = F::alloc(n_);
    std::lock_guard lock(planner_mutex());
    plan_ = F::plan(static_cast<int>(rows), static_cast<int>(cols), in_, out_, sign);
  }
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
  ~Plan() {
    {
      std::lock_guard lock(planner_mutex());
      F::destroy(plan_);
    }
    F::free(in_);
    F::free(out_);
  }

  std::complex<Real>* in() noexcept { return reinterpret_cast<std::complex<Real>*>(in_); }
  const std::complex<Real>* out() const noexcept { return reinterpret_cast<const std::complex<Real>*>(out_); }
  void execute() noexcept { F::execute(plan_); }

 private:
  std::size_t n_;
  typename F::complex_type* in_;
  typename F::complex_type* out_;
  typename F::plan_type plan_;
};

template <typename Real>
Plan<Real>& plan_for(std::size_t rows, std::size_t cols, int sign) {
  thread_local std::map<std::tuple<std::size_t, std::size_t, int>, Plan<Real>> cache;
  auto key = std::make_tuple(rows, cols, sign);
  auto it = cache.find(key);
  if (it == cache.end()) {
    it = cache.emplace(std::piecewise_construct, std::forward_as_tuple(key), std::forward_as_tuple(rows, cols, sign))
             .first;
  }
  return it->second;
}

// fftshift(DFT(ifftshift(x))) / sqrt(N); the same shift pattern serves both directions.
template <typename Real>
BasicComplexImage<Real> centered(const BasicComplexImage<Real>& x, int sign) {
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  auto& plan = plan_for<Real>(rows, cols, sign);
  const std::size_t rh = rows / 2;
  const std::size_t ch = cols / 2;
  std::complex<Real>* in = plan.in();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t sr = (r + rh) % rows;
    for (std::size_t c = 0; c < cols; ++c) in[r * cols + c] = x(sr, (c + ch) % cols);
  }
  plan.execute();
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(rows * cols));
  const std::complex<Real>* res = plan.out();
  BasicComplexImage<Real> out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t dr = (r + rh) % rows;
    for (std::size_t c = 0; c < cols; ++c) out(dr, (c + ch) % cols) = res[r * cols + c] * scale;
  }
  return out;
}

}  // namespace

template <typename Real>
BasicComplexImage<Real> fft2c(const BasicComplexImage<Real>& x) {
  return centered(x, FFTW_FORWARD);
}

template <typename Real>
BasicComplexImage<Real> ifft2c(const BasicComplexImage<Real>& k) {
  return centered(k, FFTW_BACKWARD);
}

template BasicComplexImage<float> fft2c(const BasicComplexImage<float>&);
template BasicComplexImage<double> fft2c(const BasicComplexImage<double>&);
template BasicComplexImage<float> ifft2c(const BasicComplexImage<float>&);
template BasicComplexImage<double> ifft2c(const BasicComplexImage<double>&);

}  // namespace fedrecon
