#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include <fftw3.h>

#include "falldet/error.hpp"

namespace falldet {

namespace detail {
// FFTW's planner is not thread-safe; execution on distinct buffers is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Real-to-complex FFT of a fixed size, owning its FFTW plan and buffers.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    if (n == 0) throw InvalidFftSize("FFT size must be positive");
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(detail::fftw_planner_mutex());
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), out_, in_, FFTW_ESTIMATE);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(in_);
    fftw_free(out_);
  }

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  /// Input buffer of length size(); fill it, then call forward().
  std::span<double> input() { return {in_, n_}; }

  void forward() { fftw_execute(forward_); }

  std::complex<double> bin(std::size_t k) const { return {out_[k][0], out_[k][1]}; }

  void power(std::span<double> out) const {
    for (std::size_t k = 0; k < bins(); ++k) out[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
  }

  /// Writes `spectrum` (bins() values) and runs the unnormalized inverse
  /// transform into input().
  void inverse(std::span<const std::complex<double>> spectrum) {
    for (std::size_t k = 0; k < bins(); ++k) {
      out_[k][0] = spectrum[k].real();
      out_[k][1] = spectrum[k].imag();
    }
    fftw_execute(inverse_);
  }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

/// Periodic Hann window (the FFT-bin convention).
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n);
  }
  return w;
}

}  // namespace falldet
