#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "falldet/error.hpp"

namespace falldet {

namespace detail {

/// Zeroth-order modified Bessel function of the first kind (power series).
inline double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace detail

/// Rational-ratio polyphase resampler with a Kaiser-windowed sinc kernel.
///
/// For in_rate -> out_rate reduced to L/M, output sample n sits at input time
/// n*M/L. Each of the L fractional phases owns a `taps`-long kernel,
/// normalized to unit DC gain so constant signals pass unchanged.
class PolyphaseResampler {
 public:
  PolyphaseResampler(int in_rate, int out_rate, int taps = 64,
                     double kaiser_beta = 8.6, double rolloff = 0.94)
      : in_rate_(in_rate), out_rate_(out_rate), taps_(taps) {
    if (in_rate <= 0 || out_rate <= 0) {
      throw ParamOutOfRange("sample rates must be positive");
    }
    if (taps < 2 || taps % 2 != 0) {
      throw ParamOutOfRange("resampler tap count must be even and >= 2");
    }
    const int g = std::gcd(in_rate, out_rate);
    up_ = out_rate / g;
    down_ = in_rate / g;
    const double cutoff =
        rolloff * std::min(1.0, static_cast<double>(up_) / down_);
    const double half = taps / 2.0;
    const double i0_beta = detail::bessel_i0(kaiser_beta);

    table_.assign(static_cast<std::size_t>(up_) * taps_, 0.0);
    for (int phase = 0; phase < up_; ++phase) {
      const double frac = static_cast<double>(phase) / up_;
      double* row = &table_[static_cast<std::size_t>(phase) * taps_];
      double sum = 0.0;
      for (int t = 0; t < taps_; ++t) {
        const int k = t - (taps_ / 2 - 1);
        const double d = k - frac;
        const double x = d / half;
        double w = 0.0;
        if (std::abs(x) <= 1.0) {
          w = detail::bessel_i0(kaiser_beta * std::sqrt(1.0 - x * x)) / i0_beta;
        }
        row[t] = cutoff * detail::sinc(cutoff * d) * w;
        sum += row[t];
      }
      for (int t = 0; t < taps_; ++t) row[t] /= sum;
    }
  }

  int in_rate() const { return in_rate_; }
  int out_rate() const { return out_rate_; }

  static std::size_t output_length(std::size_t n_in, int in_rate, int out_rate) {
    const int g = std::gcd(in_rate, out_rate);
    const std::size_t up = static_cast<std::size_t>(out_rate / g);
    const std::size_t down = static_cast<std::size_t>(in_rate / g);
    return (n_in * up + down - 1) / down;
  }

  std::vector<float> process(std::span<const float> in) const {
    if (in_rate_ == out_rate_) return {in.begin(), in.end()};
    const std::size_t n_out = output_length(in.size(), in_rate_, out_rate_);
    std::vector<float> out(n_out);
    const long long n_in = static_cast<long long>(in.size());
    const int offset = taps_ / 2 - 1;
    for (std::size_t n = 0; n < n_out; ++n) {
      const unsigned long long pos = static_cast<unsigned long long>(n) * down_;
      const long long base = static_cast<long long>(pos / up_);
      const int phase = static_cast<int>(pos % up_);
      const double* row = &table_[static_cast<std::size_t>(phase) * taps_];
      double acc = 0.0;
      const long long first = base - offset;
      int t0 = 0, t1 = taps_;
      if (first < 0) t0 = static_cast<int>(-first);
      if (first + taps_ > n_in) t1 = static_cast<int>(n_in - first);
      for (int t = t0; t < t1; ++t) acc += row[t] * in[static_cast<std::size_t>(first + t)];
      out[n] = static_cast<float>(acc);
    }
    return out;
  }

 private:
  int in_rate_;
  int out_rate_;
  int taps_;
  int up_ = 1;
  int down_ = 1;
  std::vector<double> table_;
};

inline std::vector<float> resample(std::span<const float> in, int in_rate, int out_rate) {
  if (in_rate == out_rate) return {in.begin(), in.end()};
  return PolyphaseResampler(in_rate, out_rate).process(in);
}

}  // namespace falldet
