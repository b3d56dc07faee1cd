#pragma once

#include <cmath>
#include <numbers>
#include <span>

namespace falldet::dsp {

/// Second-order IIR section with RBJ audio-EQ-cookbook designs.
/// Coefficients are normalized so a0 = 1; state is direct form I.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;

  static Biquad lowpass(double f, double fs, double q = std::numbers::sqrt2 / 2) {
    const auto [c, alpha] = terms(f, fs, q);
    return normalized((1 - c) / 2, 1 - c, (1 - c) / 2, 1 + alpha, -2 * c, 1 - alpha);
  }
  static Biquad highpass(double f, double fs, double q = std::numbers::sqrt2 / 2) {
    const auto [c, alpha] = terms(f, fs, q);
    return normalized((1 + c) / 2, -(1 + c), (1 + c) / 2, 1 + alpha, -2 * c, 1 - alpha);
  }
  /// Constant 0 dB peak gain band-pass.
  static Biquad bandpass(double f, double fs, double q) {
    const auto [c, alpha] = terms(f, fs, q);
    return normalized(alpha, 0, -alpha, 1 + alpha, -2 * c, 1 - alpha);
  }
  static Biquad bandstop(double f, double fs, double q) {
    const auto [c, alpha] = terms(f, fs, q);
    return normalized(1, -2 * c, 1, 1 + alpha, -2 * c, 1 - alpha);
  }
  static Biquad peaking(double f, double fs, double q, double gain_db) {
    const auto [c, alpha] = terms(f, fs, q);
    const double a = std::pow(10.0, gain_db / 40.0);
    return normalized(1 + alpha * a, -2 * c, 1 - alpha * a, 1 + alpha / a, -2 * c, 1 - alpha / a);
  }
  static Biquad low_shelf(double f, double fs, double gain_db) {
    const double a = std::pow(10.0, gain_db / 40.0);
    const auto [c, alpha] = terms(f, fs, std::numbers::sqrt2 / 2);
    const double s = 2 * std::sqrt(a) * alpha;
    return normalized(a * ((a + 1) - (a - 1) * c + s), 2 * a * ((a - 1) - (a + 1) * c),
                      a * ((a + 1) - (a - 1) * c - s), (a + 1) + (a - 1) * c + s,
                      -2 * ((a - 1) + (a + 1) * c), (a + 1) + (a - 1) * c - s);
  }
  static Biquad high_shelf(double f, double fs, double gain_db) {
    const double a = std::pow(10.0, gain_db / 40.0);
    const auto [c, alpha] = terms(f, fs, std::numbers::sqrt2 / 2);
    const double s = 2 * std::sqrt(a) * alpha;
    return normalized(a * ((a + 1) + (a - 1) * c + s), -2 * a * ((a - 1) + (a + 1) * c),
                      a * ((a + 1) + (a - 1) * c - s), (a + 1) - (a - 1) * c + s,
                      2 * ((a - 1) - (a + 1) * c), (a + 1) - (a - 1) * c - s);
  }

  double operator()(double x) {
    const double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    return y;
  }

  template <class T>
  void process(std::span<T> samples) {
    for (T& s : samples) s = static_cast<T>((*this)(s));
  }

  /// Magnitude response at frequency f.
  double magnitude(double f, double fs) const {
    const double w = 2 * std::numbers::pi * f / fs;
    const double cr = std::cos(w), ci = -std::sin(w), c2r = std::cos(2 * w), c2i = -std::sin(2 * w);
    const double nr = b0 + b1 * cr + b2 * c2r, ni = b1 * ci + b2 * c2i;
    const double dr = 1 + a1 * cr + a2 * c2r, di = a1 * ci + a2 * c2i;
    return std::sqrt((nr * nr + ni * ni) / (dr * dr + di * di));
  }

 private:
  struct Terms {
    double c, alpha;
  };
  static Terms terms(double f, double fs, double q) {
    const double w = 2 * std::numbers::pi * f / fs;
    return {std::cos(w), std::sin(w) / (2 * q)};
  }
  static Biquad normalized(double b0, double b1, double b2, double a0, double a1, double a2) {
    Biquad f;
    f.b0 = b0 / a0;
    f.b1 = b1 / a0;
    f.b2 = b2 / a0;
    f.a1 = a1 / a0;
    f.a2 = a2 / a0;
    return f;
  }
};

}  // namespace falldet::dsp
