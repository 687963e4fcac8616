#ifndef ENTCLT_FFT_HPP
#define ENTCLT_FFT_HPP

// Thin RAII layer over FFTW3. Only the planner is serialized; executing a
// plan on its own buffers is thread-safe.

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <new>
#include <vector>

namespace entclt::fft {

using cplx = std::complex<double>;

inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t k = 1;
  while (k < n) k <<= 1;
  return k;
}

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace detail {

struct fftw_free_deleter {
  void operator()(void* p) const { fftw_free(p); }
};

template <class T>
using fftw_buffer = std::unique_ptr<T[], fftw_free_deleter>;

template <class T>
fftw_buffer<T> allocate(std::size_t n) {
  void* p = fftw_malloc(sizeof(T) * std::max<std::size_t>(n, 1));
  if (!p) throw std::bad_alloc();
  return fftw_buffer<T>(static_cast<T*>(p));
}

struct plan_guard {
  fftw_plan plan = nullptr;
  explicit plan_guard(fftw_plan p) : plan(p) {}
  plan_guard(const plan_guard&) = delete;
  plan_guard& operator=(const plan_guard&) = delete;
  ~plan_guard() {
    if (plan) {
      std::lock_guard<std::mutex> lock(planner_mutex());
      fftw_destroy_plan(plan);
    }
  }
};

}  // namespace detail

/// Real-to-complex transform of `x` zero-padded to length `n`;
/// returns n/2 + 1 coefficients of sum_j x_j e^{-2 pi i jk/n}.
inline std::vector<cplx> forward_real(const std::vector<double>& x, std::size_t n) {
  auto in = detail::allocate<double>(n);
  auto out = detail::allocate<fftw_complex>(n / 2 + 1);
  std::fill(in.get(), in.get() + n, 0.0);
  std::copy_n(x.begin(), std::min(x.size(), n), in.get());
  fftw_plan p;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    p = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
  }
  detail::plan_guard guard(p);
  fftw_execute(p);
  std::vector<cplx> result(n / 2 + 1);
  for (std::size_t k = 0; k < result.size(); ++k) result[k] = {out[k][0], out[k][1]};
  return result;
}

/// Inverse of forward_real, including the 1/n normalization.
inline std::vector<double> inverse_real(const std::vector<cplx>& spec, std::size_t n) {
  auto in = detail::allocate<fftw_complex>(n / 2 + 1);
  auto out = detail::allocate<double>(n);
  for (std::size_t k = 0; k < n / 2 + 1; ++k) {
    in[k][0] = spec[k].real();
    in[k][1] = spec[k].imag();
  }
  fftw_plan p;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    p = fftw_plan_dft_c2r_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
  }
  detail::plan_guard guard(p);
  fftw_execute(p);
  std::vector<double> result(n);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) result[j] = out[j] * scale;
  return result;
}

/// Full linear convolution, length a.size() + b.size() - 1.
inline std::vector<double> linear_convolve(const std::vector<double>& a,
                                           const std::vector<double>& b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t len = a.size() + b.size() - 1;
  const std::size_t n = next_pow2(len);
  auto fa = forward_real(a, n);
  const auto fb = forward_real(b, n);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  auto full = inverse_real(fa, n);
  full.resize(len);
  return full;
}

}  // namespace entclt::fft

#endif
