#pragma once

// Waveform augmentations.
//
// Every transform acts on the unpadded region [0, original_len) of a clip
// and draws its random parameters from an Rng seeded per (seed, source,
// spec name). Parameters are given either as a fixed value ("gain_db") or
// as a range ("min_gain_db" / "max_gain_db"); missing ones fall back to
// the transform's default range.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "falldet/audio/clip.hpp"
#include "falldet/audio/resample.hpp"
#include "falldet/dsp/biquad.hpp"
#include "falldet/error.hpp"
#include "falldet/features/fft.hpp"
#include "falldet/random.hpp"

namespace falldet::augment {

enum class Scope { AnyClass, NoFallOnly };

inline std::string_view to_string(Scope s) { return s == Scope::AnyClass ? "any" : "nofall_only"; }

inline Scope parse_scope(std::string_view text) {
  if (text == "any") return Scope::AnyClass;
  if (text == "nofall_only") return Scope::NoFallOnly;
  throw ParamOutOfRange("unknown scope '" + std::string(text) + "'");
}

/// One plan slot: an atomic transform, or a "composite" whose `steps` run in
/// order on the same clip.
struct AugmentationSpec {
  std::string name;
  std::string transform;
  nlohmann::json params = nlohmann::json::object();
  Scope scope = Scope::AnyClass;
  std::uint64_t seed = 0;
  std::vector<AugmentationSpec> steps;
};

using Signal = std::vector<double>;

namespace detail {

class Params {
 public:
  Params(const nlohmann::json& p, Rng& rng) : p_(p.is_null() ? nlohmann::json::object() : p), rng_(rng) {
    if (!p_.is_object()) throw ParamOutOfRange("transform parameters must be a JSON object");
  }

  double real(const std::string& key, double lo, double hi) {
    if (p_.contains(key)) return p_.at(key).get<double>();
    const double a = p_.value("min_" + key, lo);
    const double b = p_.value("max_" + key, hi);
    if (a > b) throw ParamOutOfRange(key + ": min exceeds max");
    return uniform(rng_, a, b);
  }

  double fixed(const std::string& key, double fallback) { return p_.value(key, fallback); }

  void require(bool ok, const std::string& what) {
    if (!ok) throw ParamOutOfRange(what);
  }

  Rng& rng() { return rng_; }

 private:
  nlohmann::json p_;
  Rng& rng_;
};

inline double rms(const Signal& x) {
  if (x.empty()) return 0.0;
  double s = 0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

inline double db_to_amp(double db) { return std::pow(10.0, db / 20.0); }

inline void filter(Signal& x, dsp::Biquad f) {
  for (double& v : x) v = f(v);
}

inline Signal resample_signal(const Signal& x, int in_rate, int out_rate) {
  std::vector<float> f(x.begin(), x.end());
  const auto y = PolyphaseResampler(in_rate, out_rate).process(f);
  return {y.begin(), y.end()};
}

inline void fit_length(Signal& x, std::size_t n) { x.resize(n, 0.0); }

}  // namespace detail

/// Phase-vocoder time stretch: rate > 1 is faster (shorter output).
/// Output length is round(len / rate).
inline Signal phase_vocoder(const Signal& x, double rate, std::size_t n_fft = 1024, std::size_t hop = 256) {
  if (!(rate > 0.0)) throw ParamOutOfRange("stretch rate must be positive");
  const std::size_t n = x.size();
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(n) / rate));
  if (n == 0) return Signal(out_len, 0.0);
  const std::size_t bins = n_fft / 2 + 1;
  const auto window = hann_window(n_fft);
  const long long pad = static_cast<long long>(n_fft / 2);

  // Centered analysis STFT with zero padding.
  const std::size_t frames = 1 + n / hop;
  RealFft fft(n_fft);
  std::vector<std::vector<std::complex<double>>> spec(frames, std::vector<std::complex<double>>(bins));
  for (std::size_t t = 0; t < frames; ++t) {
    auto in = fft.input();
    for (std::size_t i = 0; i < n_fft; ++i) {
      const long long s = static_cast<long long>(t * hop + i) - pad;
      in[i] = (s >= 0 && s < static_cast<long long>(n)) ? x[static_cast<std::size_t>(s)] * window[i] : 0.0;
    }
    fft.forward();
    for (std::size_t k = 0; k < bins; ++k) spec[t][k] = fft.bin(k);
  }

  // Resynthesis frames at fractional analysis positions.
  std::vector<double> phase(bins), advance(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    phase[k] = std::arg(spec[0][k]);
    advance[k] = 2.0 * std::numbers::pi * static_cast<double>(hop) * static_cast<double>(k) / n_fft;
  }
  const std::size_t out_frames = 1 + out_len / hop;
  Signal y(out_frames * hop + n_fft, 0.0), norm(out_frames * hop + n_fft, 0.0);
  std::vector<std::complex<double>> frame(bins);
  for (std::size_t j = 0; j < out_frames; ++j) {
    const double pos = static_cast<double>(j) * rate;
    const auto t0 = std::min(static_cast<std::size_t>(pos), frames - 1);
    const std::size_t t1 = std::min(t0 + 1, frames - 1);
    const double alpha = pos - std::floor(pos);
    for (std::size_t k = 0; k < bins; ++k) {
      const double mag = (1.0 - alpha) * std::abs(spec[t0][k]) + alpha * std::abs(spec[t1][k]);
      frame[k] = std::polar(mag, phase[k]);
      double dphi = std::arg(spec[t1][k]) - std::arg(spec[t0][k]) - advance[k];
      dphi -= 2.0 * std::numbers::pi * std::round(dphi / (2.0 * std::numbers::pi));
      phase[k] += advance[k] + dphi;
    }
    fft.inverse(frame);
    auto out = fft.input();
    for (std::size_t i = 0; i < n_fft; ++i) {
      y[j * hop + i] += out[i] / static_cast<double>(n_fft) * window[i];
      norm[j * hop + i] += window[i] * window[i];
    }
  }
  Signal result(out_len, 0.0);
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t s = i + static_cast<std::size_t>(pad);
    if (s < y.size() && norm[s] > 1e-8) result[i] = y[s] / norm[s];
  }
  return result;
}

using TransformFn = std::function<void(Signal&, detail::Params&)>;

struct TransformInfo {
  Scope scope;
  TransformFn fn;
};

/// Catalog of atomic transforms by name.
inline const std::map<std::string, TransformInfo>& transform_catalog() {
  using detail::Params;
  constexpr double fs = kSampleRate;
  static const std::map<std::string, TransformInfo> catalog = {
      // Any class
      {"gain", {Scope::AnyClass, [](Signal& x, Params& p) {
         const double g = detail::db_to_amp(p.real("gain_db", -12.0, 12.0));
         for (double& v : x) v *= g;
       }}},
      {"gaussian_noise", {Scope::AnyClass, [](Signal& x, Params& p) {
         const double amp = p.real("amplitude", 0.001, 0.015);
         p.require(amp >= 0.0, "noise amplitude must be >= 0");
         for (double& v : x) v += amp * normal(p.rng());
       }}},
      {"gain_transition", {Scope::AnyClass, [](Signal& x, Params& p) {
         const double g0 = p.real("start_gain_db", -18.0, 6.0);
         const double g1 = p.real("end_gain_db", -18.0, 6.0);
         const double frac = p.real("duration_fraction", 0.2, 0.8);
         p.require(frac > 0.0 && frac <= 1.0, "duration_fraction must be in (0, 1]");
         const auto span = std::max<std::size_t>(1, static_cast<std::size_t>(frac * x.size()));
         const std::size_t start = x.size() > span ? uniform_index(p.rng(), x.size() - span + 1) : 0;
         for (std::size_t i = 0; i < x.size(); ++i) {
           double t = i < start ? 0.0 : std::min(1.0, static_cast<double>(i - start) / span);
           x[i] *= detail::db_to_amp(g0 + (g1 - g0) * t);
         }
       }}},
      {"loudness_normalize", {Scope::AnyClass, [](Signal& x, Params& p) {
         const double target = p.real("target_dbfs", -31.0, -13.0);
         const double r = detail::rms(x);
         if (r <= 0.0) return;
         const double g = detail::db_to_amp(target) / r;
         for (double& v : x) v *= g;
       }}},
      {"pitch_shift", {Scope::AnyClass, [](Signal& x, Params& p) {
         const double semis = p.real("semitones", -2.0, 2.0);
         p.require(std::abs(semis) <= 12.0, "pitch shift limited to +-12 semitones");
         if (x.empty() || semis == 0.0) return;
         const double ratio = std::pow(2.0, semis / 12.0);
         const int in_rate = static_cast<int>(std::lround(fs * ratio));
         Signal stretched = phase_vocoder(x, static_cast<double>(fs) / in_rate);
         Signal y = detail::resample_signal(stretched, in_rate, static_cast<int>(fs));
         const std::size_t n = x.size();
         x = std::move(y);
         detail::fit_length(x, n);
       }}},
      {"resample", {Scope::AnyClass, [](Signal& x, Params& p) {
         // Speed change: reinterpret at another rate, then convert back.
         const double speed = p.real("speed", 0.8, 1.25);
         p.require(speed >= 0.5 && speed <= 2.0, "resample speed must be in [0.5, 2]");
         const std::size_t n = x.size();
         x = detail::resample_signal(x, static_cast<int>(std::lround(fs * speed)), static_cast<int>(fs));
         if (p.fixed("keep_length", 0.0) != 0.0) detail::fit_length(x, n);
       }}},
      {"time_stretch", {Scope::AnyClass, [](Signal& x, Params& p) {
         const double rate = p.real("rate", 0.8, 1.25);
         p.require(rate >= 0.8 && rate <= 1.25, "time stretch rate must be in [0.8, 1.25]");
         const std::size_t n = x.size();
         x = phase_vocoder(x, rate);
         if (p.fixed("keep_length", 0.0) != 0.0) detail::fit_length(x, n);
       }}},

      // No-fall only
      {"time_shift", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         const double frac = p.real("shift_fraction", -0.5, 0.5);
         p.require(std::abs(frac) <= 1.0, "shift_fraction must be in [-1, 1]");
         if (x.empty()) return;
         const auto n = static_cast<long long>(x.size());
         const long long shift = static_cast<long long>(std::llround(frac * static_cast<double>(n)));
         const bool rollover = p.fixed("rollover", 1.0) != 0.0;
         Signal y(x.size(), 0.0);
         for (long long i = 0; i < n; ++i) {
           long long j = i + shift;
           if (rollover) j = ((j % n) + n) % n;
           if (j >= 0 && j < n) y[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(i)];
         }
         x = std::move(y);
       }}},
      {"high_pass", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         detail::filter(x, dsp::Biquad::highpass(p.real("cutoff_hz", 20.0, 2400.0), fs));
       }}},
      {"low_pass", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         detail::filter(x, dsp::Biquad::lowpass(p.real("cutoff_hz", 150.0, 7500.0), fs));
       }}},
      {"band_pass", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         detail::filter(x, dsp::Biquad::bandpass(p.real("center_hz", 200.0, 4000.0), fs, p.real("q", 0.5, 2.0)));
       }}},
      {"band_stop", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         detail::filter(x, dsp::Biquad::bandstop(p.real("center_hz", 200.0, 4000.0), fs, p.real("q", 0.5, 2.0)));
       }}},
      {"peaking", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         detail::filter(x, dsp::Biquad::peaking(p.real("center_hz", 50.0, 7500.0), fs, p.real("q", 0.5, 5.0),
                                                p.real("gain_db", -24.0, 24.0)));
       }}},
      {"low_shelf", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         detail::filter(x, dsp::Biquad::low_shelf(p.real("cutoff_hz", 50.0, 4000.0), fs, p.real("gain_db", -18.0, 18.0)));
       }}},
      {"high_shelf", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         detail::filter(x, dsp::Biquad::high_shelf(p.real("cutoff_hz", 300.0, 7500.0), fs, p.real("gain_db", -18.0, 18.0)));
       }}},
      {"gaussian_snr", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         const double snr = p.real("snr_db", 5.0, 40.0);
         const double sigma = detail::rms(x) / detail::db_to_amp(snr);
         for (double& v : x) v += sigma * normal(p.rng());
       }}},
      {"reverse", {Scope::NoFallOnly, [](Signal& x, Params&) { std::reverse(x.begin(), x.end()); }}},
      {"clipping_distortion", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         const double pct = p.real("percentile", 0.0, 40.0);
         p.require(pct >= 0.0 && pct < 100.0, "clipping percentile must be in [0, 100)");
         if (x.empty() || pct == 0.0) return;
         Signal mags(x.size());
         for (std::size_t i = 0; i < x.size(); ++i) mags[i] = std::abs(x[i]);
         const auto k = static_cast<std::size_t>((1.0 - pct / 100.0) * static_cast<double>(x.size() - 1));
         std::nth_element(mags.begin(), mags.begin() + static_cast<long>(k), mags.end());
         const double t = mags[k];
         for (double& v : x) v = std::clamp(v, -t, t);
       }}},
      {"polarity_inversion", {Scope::NoFallOnly, [](Signal& x, Params&) {
         for (double& v : x) v = -v;
       }}},
      {"tanh_distortion", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         const double amount = p.real("distortion", 0.01, 0.7);
         p.require(amount >= 0.0 && amount <= 1.0, "distortion must be in [0, 1]");
         const double r0 = detail::rms(x);
         const double k = 1.0 + 20.0 * amount;
         for (double& v : x) v = std::tanh(k * v);
         const double r1 = detail::rms(x);
         if (r1 > 0.0)
           for (double& v : x) v *= r0 / r1;
       }}},
      {"time_mask", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         const double frac = p.real("fraction", 0.01, 0.15);
         p.require(frac >= 0.0 && frac <= 1.0, "mask fraction must be in [0, 1]");
         const auto span = static_cast<std::size_t>(frac * static_cast<double>(x.size()));
         if (span == 0) return;
         const std::size_t start = uniform_index(p.rng(), x.size() - span + 1);
         std::fill(x.begin() + static_cast<long>(start), x.begin() + static_cast<long>(start + span), 0.0);
       }}},
      {"normalize", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         const double peak_target = p.fixed("peak", 1.0);
         double peak = 0;
         for (double v : x) peak = std::max(peak, std::abs(v));
         if (peak <= 0.0) return;
         for (double& v : x) v *= peak_target / peak;
       }}},
      {"mp3_compression", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         // Quality-degradation stand-in: band-limit, then requantize.
         const double cutoff = p.real("cutoff_hz", 3000.0, 7000.0);
         const int bits = static_cast<int>(std::lround(p.real("bits", 4.0, 8.0)));
         p.require(bits >= 1 && bits <= 16, "bits must be in [1, 16]");
         auto lp = dsp::Biquad::lowpass(cutoff, fs);
         auto lp2 = dsp::Biquad::lowpass(cutoff, fs);
         const double levels = std::ldexp(1.0, bits - 1);
         for (double& v : x) v = std::round(lp2(lp(v)) * levels) / levels;
       }}},
      {"seven_band_eq", {Scope::NoFallOnly, [](Signal& x, Params& p) {
         static constexpr double centers[7] = {100, 200, 400, 800, 1600, 3200, 6400};
         for (double c : centers) detail::filter(x, dsp::Biquad::peaking(c, fs, 1.0, p.real("gain_db", -12.0, 12.0)));
       }}},
  };
  return catalog;
}

/// NoFallOnly when the transform or any composite step is.
inline Scope natural_scope(const AugmentationSpec& spec) {
  if (spec.transform == "composite") {
    if (spec.steps.empty()) throw EmptyPlan("composite '" + spec.name + "' has no steps");
    for (const auto& s : spec.steps)
      if (natural_scope(s) == Scope::NoFallOnly) return Scope::NoFallOnly;
    return Scope::AnyClass;
  }
  auto it = transform_catalog().find(spec.transform);
  if (it == transform_catalog().end()) throw UnknownTransform("unknown transform '" + spec.transform + "'");
  return it->second.scope;
}

/// A spec may be narrower than its transforms, never wider.
inline void validate_spec(const AugmentationSpec& spec) {
  if (natural_scope(spec) == Scope::NoFallOnly && spec.scope == Scope::AnyClass) {
    throw ScopeViolation("spec '" + spec.name + "' uses a no-fall-only transform but is scoped to any class");
  }
}

namespace detail {

inline void run(const AugmentationSpec& spec, Signal& x, Rng& rng) {
  if (spec.transform == "composite") {
    for (const auto& step : spec.steps) run(step, x, rng);
    return;
  }
  Params p(spec.params, rng);
  transform_catalog().at(spec.transform).fn(x, p);
}

}  // namespace detail

/// Tag stored on augmented clips: "<name>-s<seed>".
inline std::string augment_tag(const AugmentationSpec& spec) { return spec.name + "-s" + std::to_string(spec.seed); }

/// Applies `spec` to the unpadded region of `clip`; the result is clipped to
/// [-1, 1] and re-padded to the input length when it still fits.
inline AudioClip apply(const AugmentationSpec& spec, const AudioClip& clip) {
  validate_spec(spec);
  if (clip.sample_rate_hz != kSampleRate) throw ParamOutOfRange("augmentation expects 16 kHz clips");
  if (spec.scope == Scope::NoFallOnly && clip.label == Label::Fall) {
    throw ScopeViolation("'" + spec.name + "' may not be applied to fall clip '" + clip.source_id + "'");
  }
  const std::size_t n = std::min(clip.original_len, clip.samples.size());
  Signal x(clip.samples.begin(), clip.samples.begin() + static_cast<long>(n));
  Rng rng(derive_seed(spec.seed, clip.source_id, spec.name));
  detail::run(spec, x, rng);

  AudioClip out = clip;
  out.original_len = x.size();
  out.samples.assign(x.size(), 0.0f);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = std::isfinite(x[i]) ? std::clamp(x[i], -1.0, 1.0) : 0.0;
    out.samples[i] = static_cast<float>(v);
  }
  if (out.samples.size() < clip.samples.size()) out.samples.resize(clip.samples.size(), 0.0f);
  out.augment_tag = augment_tag(spec);
  return out;
}

}  // namespace falldet::augment
