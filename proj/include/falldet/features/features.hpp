#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "falldet/audio/clip.hpp"
#include "falldet/error.hpp"
#include "falldet/features/feature_matrix.hpp"
#include "falldet/features/fft.hpp"

namespace falldet {

inline constexpr double kLogFloor = 1e-10;

// ---------------------------------------------------------------------------
// Segmented raw audio and Diff features

/// Reshapes the waveform into N = floor(len / D) frames of D = t_seg_ms * 16
/// samples; the remainder is dropped. A frame is valid iff it starts before
/// original_len.
inline FeatureMatrix segment_raw(const AudioClip& clip, int t_seg_ms) {
  if (t_seg_ms < 1) throw ParamOutOfRange("t_seg_ms must be >= 1");
  const std::size_t dims = static_cast<std::size_t>(t_seg_ms) * (kSampleRate / 1000);
  if (dims > clip.samples.size()) {
    throw SegmentTooLong("segment of " + std::to_string(dims) + " samples exceeds clip of " +
                         std::to_string(clip.samples.size()));
  }
  const std::size_t frames = clip.samples.size() / dims;
  FeatureMatrix m(frames, dims, FeatureKind::SegmentedRaw);
  std::copy_n(clip.samples.begin(), frames * dims, m.data.begin());
  for (std::size_t i = 0; i < frames; ++i) m.mask[i] = i * dims < clip.original_len ? 1 : 0;
  m.meta.t_seg_ms = t_seg_ms;
  return m;
}

/// Row i = frame(i + 1) - frame(i); valid iff both source frames are valid.
inline FeatureMatrix diff_features(const FeatureMatrix& seg) {
  if (seg.kind != FeatureKind::SegmentedRaw) throw ParamOutOfRange("diff_features needs segmented raw input");
  if (seg.rows < 2) throw TooFewFrames("need at least 2 frames, got " + std::to_string(seg.rows));
  FeatureMatrix m(seg.rows - 1, seg.cols, FeatureKind::Diff);
  for (std::size_t r = 0; r + 1 < seg.rows; ++r) {
    const auto a = seg.row(r), b = seg.row(r + 1);
    auto out = m.row(r);
    for (std::size_t c = 0; c < seg.cols; ++c) out[c] = b[c] - a[c];
    m.mask[r] = seg.mask[r] && seg.mask[r + 1];
  }
  m.meta = seg.meta;
  return m;
}

// ---------------------------------------------------------------------------
// Log mel spectrogram

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filters on the HTK mel scale over [f_min, f_max], one row per
/// mel band, n_fft/2 + 1 columns. Peak weight 1, no area normalization.
struct MelFilterbank {
  int n_fft = 0;
  int n_mels = 0;
  std::vector<double> centers_hz;  // n_mels + 2 band edges
  std::vector<double> weights;     // n_mels x bins, row-major

  std::size_t bins() const { return static_cast<std::size_t>(n_fft / 2 + 1); }
  double weight(int mel, std::size_t bin) const { return weights[static_cast<std::size_t>(mel) * bins() + bin]; }
  double center_hz(int mel) const { return centers_hz[static_cast<std::size_t>(mel) + 1]; }
};

inline MelFilterbank make_mel_filterbank(int n_fft, int n_mels, double sample_rate = kSampleRate,
                                         double f_min = 0.0, double f_max = kSampleRate / 2.0) {
  MelFilterbank fb;
  fb.n_fft = n_fft;
  fb.n_mels = n_mels;
  const double mel_lo = hz_to_mel(f_min), mel_hi = hz_to_mel(f_max);
  fb.centers_hz.resize(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    fb.centers_hz[static_cast<std::size_t>(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }
  const std::size_t bins = fb.bins();
  fb.weights.assign(static_cast<std::size_t>(n_mels) * bins, 0.0);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = fb.centers_hz[static_cast<std::size_t>(m)];
    const double mid = fb.centers_hz[static_cast<std::size_t>(m) + 1];
    const double hi = fb.centers_hz[static_cast<std::size_t>(m) + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      const double rise = (f - lo) / (mid - lo);
      const double fall = (hi - f) / (hi - mid);
      fb.weights[static_cast<std::size_t>(m) * bins + k] = std::max(0.0, std::min(rise, fall));
    }
  }
  return fb;
}

/// Process-wide read-only filterbank cache.
inline std::shared_ptr<const MelFilterbank> shared_mel_filterbank(int n_fft, int n_mels) {
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::shared_ptr<const MelFilterbank>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{n_fft, n_mels}];
  if (!slot) slot = std::make_shared<const MelFilterbank>(make_mel_filterbank(n_fft, n_mels));
  return slot;
}

namespace detail {
/// Reflect-mode index (numpy 'reflect': edge sample not repeated).
inline std::size_t reflect_index(long long i, long long n) {
  if (n == 1) return 0;
  const long long period = 2 * (n - 1);
  long long j = i % period;
  if (j < 0) j += period;
  if (j >= n) j = period - j;
  return static_cast<std::size_t>(j);
}
}  // namespace detail

inline std::size_t stft_frames(std::size_t len, int hop) { return 1 + len / static_cast<std::size_t>(hop); }

/// Hann-windowed power STFT with centered frames (reflect padding by n_fft/2),
/// mel pooling over [0, 8000] Hz and natural log with a 1e-10 floor.
/// Output T x n_mels with T = 1 + floor(len / hop). Frame t is valid iff its
/// window overlaps [0, original_len).
inline FeatureMatrix log_mel(const AudioClip& clip, int n_fft, int hop, int n_mels) {
  if (n_fft < 2 || n_fft > 65536 || !is_power_of_two(static_cast<std::size_t>(n_fft))) {
    throw InvalidFftSize("n_fft must be a power of two in [2, 65536], got " + std::to_string(n_fft));
  }
  if (hop < 1) throw ParamOutOfRange("hop must be >= 1");
  if (n_mels < 1) throw ParamOutOfRange("n_mels must be >= 1");
  if (clip.samples.empty()) throw ParamOutOfRange("empty clip");

  const auto fb = shared_mel_filterbank(n_fft, n_mels);
  const std::size_t len = clip.samples.size();
  const std::size_t frames = stft_frames(len, hop);
  const long long half = n_fft / 2;
  const auto window = hann_window(static_cast<std::size_t>(n_fft));

  FeatureMatrix m(frames, static_cast<std::size_t>(n_mels), FeatureKind::LogMel);
  m.meta.n_fft = n_fft;
  m.meta.hop = hop;
  m.meta.n_mels = n_mels;

  RealFft fft(static_cast<std::size_t>(n_fft));
  std::vector<double> power(fft.bins());
  const std::size_t bins = fft.bins();
  for (std::size_t t = 0; t < frames; ++t) {
    const long long start = static_cast<long long>(t) * hop - half;
    auto in = fft.input();
    for (long long i = 0; i < n_fft; ++i) {
      in[static_cast<std::size_t>(i)] =
          window[static_cast<std::size_t>(i)] *
          clip.samples[detail::reflect_index(start + i, static_cast<long long>(len))];
    }
    fft.forward();
    fft.power(power);
    auto out = m.row(t);
    for (int mel = 0; mel < n_mels; ++mel) {
      const double* w = &fb->weights[static_cast<std::size_t>(mel) * bins];
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += w[k] * power[k];
      out[static_cast<std::size_t>(mel)] = static_cast<float>(std::log(std::max(e, kLogFloor)));
    }
    m.mask[t] = clip.original_len > 0 && start < static_cast<long long>(clip.original_len) ? 1 : 0;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Combined features

/// Aligns to min(T, N) frames and concatenates [log mel | segmented raw] per
/// row; the mask is the AND of both masks.
inline FeatureMatrix combine(const FeatureMatrix& logmel, const FeatureMatrix& seg) {
  if (logmel.kind != FeatureKind::LogMel || seg.kind != FeatureKind::SegmentedRaw) {
    throw ClipMismatch("combine expects (log mel, segmented raw)");
  }
  const std::size_t diff = logmel.rows > seg.rows ? logmel.rows - seg.rows : seg.rows - logmel.rows;
  if (diff > 1) {
    throw ClipMismatch("frame counts " + std::to_string(logmel.rows) + " and " + std::to_string(seg.rows) +
                       " differ by more than one");
  }
  const std::size_t rows = std::min(logmel.rows, seg.rows);
  FeatureMatrix m(rows, logmel.cols + seg.cols, FeatureKind::Combined);
  for (std::size_t r = 0; r < rows; ++r) {
    auto out = m.row(r);
    std::copy(logmel.row(r).begin(), logmel.row(r).end(), out.begin());
    std::copy(seg.row(r).begin(), seg.row(r).end(), out.begin() + static_cast<long>(logmel.cols));
    m.mask[r] = logmel.mask[r] && seg.mask[r];
  }
  m.meta = logmel.meta;
  m.meta.t_seg_ms = seg.meta.t_seg_ms;
  return m;
}

// ---------------------------------------------------------------------------
// Feature specification

/// Which feature family to extract and with which parameters.
struct FeatureSpec {
  FeatureKind kind = FeatureKind::Diff;
  int t_seg_ms = 100;
  int n_fft = 2048;
  int hop = 1600;
  int n_mels = 64;

  bool operator==(const FeatureSpec&) const = default;
};

struct FeatureShape {
  std::size_t rows = 0, cols = 0;
  bool operator==(const FeatureShape&) const = default;
};

/// Output shape for a padded clip of `len` samples, without extracting.
inline FeatureShape feature_shape(std::size_t len, const FeatureSpec& spec) {
  const std::size_t dims = static_cast<std::size_t>(spec.t_seg_ms) * (kSampleRate / 1000);
  const std::size_t raw_rows = dims ? len / dims : 0;
  const std::size_t mel_rows = stft_frames(len, spec.hop);
  switch (spec.kind) {
    case FeatureKind::SegmentedRaw: return {raw_rows, dims};
    case FeatureKind::Diff: return {raw_rows ? raw_rows - 1 : 0, dims};
    case FeatureKind::LogMel: return {mel_rows, static_cast<std::size_t>(spec.n_mels)};
    case FeatureKind::Combined:
      return {std::min(raw_rows, mel_rows), dims + static_cast<std::size_t>(spec.n_mels)};
  }
  return {};
}

inline FeatureMatrix extract_features(const AudioClip& padded, const FeatureSpec& spec) {
  switch (spec.kind) {
    case FeatureKind::SegmentedRaw: return segment_raw(padded, spec.t_seg_ms);
    case FeatureKind::Diff: return diff_features(segment_raw(padded, spec.t_seg_ms));
    case FeatureKind::LogMel: return log_mel(padded, spec.n_fft, spec.hop, spec.n_mels);
    case FeatureKind::Combined:
      return combine(log_mel(padded, spec.n_fft, spec.hop, spec.n_mels), segment_raw(padded, spec.t_seg_ms));
  }
  throw ParamOutOfRange("unknown feature kind");
}

inline nlohmann::json to_json(const FeatureSpec& spec) {
  return {{"kind", to_string(spec.kind)},
          {"t_seg_ms", spec.t_seg_ms},
          {"n_fft", spec.n_fft},
          {"hop", spec.hop},
          {"n_mels", spec.n_mels}};
}

inline FeatureSpec feature_spec_from_json(const nlohmann::json& j) {
  FeatureSpec spec;
  spec.kind = parse_feature_kind(j.at("kind").get<std::string>());
  spec.t_seg_ms = j.value("t_seg_ms", 100);
  spec.n_fft = j.value("n_fft", 2048);
  spec.hop = j.value("hop", 1600);
  spec.n_mels = j.value("n_mels", 64);
  return spec;
}

}  // namespace falldet
