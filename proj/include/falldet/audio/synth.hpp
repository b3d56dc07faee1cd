#pragma once

// Procedural stand-ins for the eight bathroom scenarios. Each category mixes
// a background (running water or a quiet room) with a foreground event:
// speech-like harmonic chirps, screams, bangs or door knocks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "falldet/audio/clip.hpp"
#include "falldet/audio/wav.hpp"
#include "falldet/dsp/biquad.hpp"
#include "falldet/random.hpp"

namespace falldet {

struct SynthSpec {
  std::map<int, int> counts;
  std::uint64_t seed = 0;
  double min_duration_s = 2.0;
  /// Longest clip in samples (8.735 s). The first generated clip always has
  /// exactly this length so the corpus maximum is fixed.
  std::size_t max_len_samples = 139760;
};

/// The recorded-corpus breakdown: 12/12/11/11/12/11/12/11 clips.
inline SynthSpec default_synth_spec(std::uint64_t seed = 2023) {
  SynthSpec spec;
  spec.counts = {{1, 12}, {2, 12}, {3, 11}, {4, 11}, {5, 12}, {6, 11}, {8, 12}, {9, 11}};
  spec.seed = seed;
  return spec;
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec spec;
  spec.seed = j.value("seed", std::uint64_t{0});
  spec.min_duration_s = j.value("min_duration_s", 2.0);
  spec.max_len_samples = j.value("max_len_samples", std::size_t{139760});
  for (const auto& [key, value] : j.at("counts").items()) {
    const int category = std::stoi(key);
    if (!is_valid_category(category)) throw ParamOutOfRange("unknown category " + key);
    const int count = value.get<int>();
    if (count < 0) throw ParamOutOfRange("negative count for category " + key);
    spec.counts[category] = count;
  }
  return spec;
}

namespace synth {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kFs = kSampleRate;

using dsp::Biquad;

inline void add_white_noise(std::vector<double>& out, Rng& rng, double level) {
  for (double& s : out) s += level * normal(rng);
}

/// Running water: 4th-order low-passed white noise with slow gurgle.
inline void add_water(std::vector<double>& out, Rng& rng, double level) {
  Biquad lp1 = Biquad::lowpass(uniform(rng, 700, 1300), kFs);
  Biquad lp2 = Biquad::lowpass(uniform(rng, 700, 1300), kFs);
  Biquad hp = Biquad::highpass(60, kFs);
  const double rate = uniform(rng, 0.5, 3.0), phase = uniform(rng, 0, kTwoPi);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double gurgle = 1.0 + 0.25 * std::sin(kTwoPi * rate * i / kFs + phase);
    out[i] += level * gurgle * hp(lp2(lp1(normal(rng))));
  }
}

/// One harmonic voiced segment whose f0 glides from f_start to f_end under a
/// raised-cosine envelope.
inline void add_voiced(std::vector<double>& out, std::size_t start, std::size_t len,
                       double f_start, double f_end, double level, int harmonics,
                       double vibrato_hz = 0.0, double vibrato_depth = 0.0) {
  double phase = 0.0;
  for (std::size_t i = 0; i < len && start + i < out.size(); ++i) {
    const double t = static_cast<double>(i) / len;
    double f0 = f_start + (f_end - f_start) * t;
    if (vibrato_hz > 0) f0 *= 1.0 + vibrato_depth * std::sin(kTwoPi * vibrato_hz * i / kFs);
    phase += kTwoPi * f0 / kFs;
    const double env = 0.5 - 0.5 * std::cos(kTwoPi * t);
    double v = 0.0;
    for (int k = 1; k <= harmonics; ++k) {
      if (f0 * k >= kFs / 2 - 200) break;
      v += std::sin(k * phase) / k;
    }
    out[start + i] += level * env * v;
  }
}

/// Amplitude-modulated syllable train (talking). Returns the end sample.
inline std::size_t add_speech(std::vector<double>& out, Rng& rng, std::size_t start,
                              std::size_t span, double f0_lo, double f0_hi, double level) {
  std::size_t pos = start;
  const std::size_t end = std::min(out.size(), start + span);
  while (pos < end) {
    const std::size_t syl = static_cast<std::size_t>(uniform(rng, 0.12, 0.32) * kFs);
    const double f0 = uniform(rng, f0_lo, f0_hi);
    const double glide = f0 * uniform(rng, 0.8, 1.25);
    add_voiced(out, pos, std::min(syl, end - pos), f0, glide, level * uniform(rng, 0.7, 1.0), 12);
    pos += syl + static_cast<std::size_t>(uniform(rng, 0.03, 0.25) * kFs);
  }
  return pos;
}

/// Loud high-pitched chirp burst.
inline void add_scream(std::vector<double>& out, Rng& rng, std::size_t start, double level) {
  const std::size_t len = static_cast<std::size_t>(uniform(rng, 0.5, 1.4) * kFs);
  const double f_start = uniform(rng, 600, 1000);
  add_voiced(out, start, len, f_start, f_start * uniform(rng, 0.6, 1.3), level, 8, 6.0, 0.03);
}

/// Exponentially decaying broadband impulse with a low resonant thump.
inline void add_bang(std::vector<double>& out, Rng& rng, std::size_t start, double level) {
  const double tau = uniform(rng, 0.04, 0.15) * kFs;
  const double thump = uniform(rng, 70, 200);
  const std::size_t len = static_cast<std::size_t>(tau * 6);
  for (std::size_t i = 0; i < len && start + i < out.size(); ++i) {
    const double env = std::exp(-static_cast<double>(i) / tau);
    out[start + i] += level * env * (0.6 * normal(rng) + 0.8 * std::sin(kTwoPi * thump * i / kFs));
  }
}

/// A train of short resonant knocks on a door.
inline void add_knocks(std::vector<double>& out, Rng& rng, std::size_t start, double level) {
  const int knocks = static_cast<int>(3 + uniform_index(rng, 6));
  const double resonance = uniform(rng, 250, 600);
  std::size_t pos = start;
  for (int k = 0; k < knocks && pos < out.size(); ++k) {
    Biquad bp = Biquad::bandpass(resonance, kFs, 4.0);
    const double tau = uniform(rng, 0.01, 0.03) * kFs;
    const std::size_t len = static_cast<std::size_t>(tau * 6);
    for (std::size_t i = 0; i < len && pos + i < out.size(); ++i) {
      const double env = std::exp(-static_cast<double>(i) / tau);
      out[pos + i] += level * 4.0 * env * bp(normal(rng));
    }
    pos += static_cast<std::size_t>(uniform(rng, 0.15, 0.32) * kFs);
  }
}

/// Band-passed scrubbing bursts (cleaning).
inline void add_scrub(std::vector<double>& out, Rng& rng, double level) {
  Biquad bp = Biquad::bandpass(uniform(rng, 1500, 3500), kFs, 1.2);
  const double rate = uniform(rng, 1.5, 4.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double env = std::max(0.0, std::sin(kTwoPi * rate * i / kFs));
    out[i] += level * env * bp(normal(rng));
  }
}

inline std::size_t random_start(Rng& rng, std::size_t n, double event_s) {
  const double room = std::max(0.0, static_cast<double>(n) / kFs - event_s);
  return static_cast<std::size_t>(uniform(rng, 0.0, room) * kFs);
}

}  // namespace synth

/// Generates one clip of `category`. Deterministic in (seed, category, index).
inline AudioClip synth_clip(int category, int index, std::size_t length, std::uint64_t seed) {
  using namespace synth;
  Rng rng(derive_seed(seed, "synth", category, index));
  std::vector<double> x(length, 0.0);
  const double dur = static_cast<double>(length) / kFs;
  const bool water = category == 1 || category == 2 || category == 3 || category == 5 ||
                     category == 6;
  if (water) add_water(x, rng, uniform(rng, 0.04, 0.1));
  add_white_noise(x, rng, 0.002);

  switch (category) {
    case 1: {  // water + call for help, mostly in a loud panicked tone
      const bool loud = uniform01(rng) < 0.75;
      const double level = loud ? uniform(rng, 0.45, 0.7) : uniform(rng, 0.2, 0.35);
      const std::size_t s = random_start(rng, length, std::min(dur, 2.5));
      add_speech(x, rng, s, static_cast<std::size_t>(uniform(rng, 1.0, 2.5) * kFs), 230, 420, level);
      break;
    }
    case 2: {  // water + normal conversation or humming
      if (uniform01(rng) < 0.8) {
        const std::size_t s = random_start(rng, length, std::min(dur, 3.0));
        add_speech(x, rng, s, static_cast<std::size_t>(uniform(rng, 1.5, 3.0) * kFs), 100, 230,
                   uniform(rng, 0.12, 0.3));
      } else {
        const double f0 = uniform(rng, 110, 200);
        add_voiced(x, random_start(rng, length, 1.5), static_cast<std::size_t>(1.5 * kFs), f0, f0,
                   0.08, 6, 5.0, 0.01);
      }
      break;
    }
    case 3: {  // water + scream
      add_scream(x, rng, random_start(rng, length, 1.4), uniform(rng, 0.5, 0.8));
      break;
    }
    case 4: {  // cleaning + singing or talking
      add_scrub(x, rng, uniform(rng, 0.03, 0.08));
      if (uniform01(rng) < 0.6) {
        std::size_t pos = random_start(rng, length, std::min(dur, 3.0));
        const int notes = static_cast<int>(3 + uniform_index(rng, 4));
        for (int k = 0; k < notes; ++k) {
          const std::size_t len = static_cast<std::size_t>(uniform(rng, 0.3, 0.6) * kFs);
          const double f0 = uniform(rng, 160, 380);
          add_voiced(x, pos, len, f0, f0, uniform(rng, 0.15, 0.35), 10, 5.5, 0.02);
          pos += len;
        }
      } else {
        const std::size_t s = random_start(rng, length, std::min(dur, 3.0));
        add_speech(x, rng, s, static_cast<std::size_t>(uniform(rng, 1.5, 3.0) * kFs), 110, 260,
                   uniform(rng, 0.12, 0.3));
      }
      break;
    }
    case 5:  // plain running water
      break;
    case 6: {  // water + something hitting the floor
      const int bangs = uniform01(rng) < 0.8 ? 1 : 2;
      for (int k = 0; k < bangs; ++k) add_bang(x, rng, random_start(rng, length, 0.8), uniform(rng, 0.5, 0.9));
      break;
    }
    case 8: {  // quiet room + knocking, sometimes with a call
      add_knocks(x, rng, random_start(rng, length, 2.5), uniform(rng, 0.4, 0.8));
      if (uniform01(rng) < 0.3) {
        add_speech(x, rng, random_start(rng, length, 1.0), static_cast<std::size_t>(0.8 * kFs), 230, 420,
                   uniform(rng, 0.3, 0.6));
      }
      break;
    }
    case 9: {  // quiet room + repeated calls for help
      const std::size_t s = random_start(rng, length, std::min(dur, 2.5));
      add_speech(x, rng, s, static_cast<std::size_t>(uniform(rng, 1.0, 2.5) * kFs), 230, 420,
                 uniform(rng, 0.35, 0.7));
      break;
    }
    default:
      throw ParamOutOfRange("unknown category " + std::to_string(category));
  }

  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  const double scale = peak > 0.95 ? 0.95 / peak : 1.0;

  AudioClip clip;
  clip.samples.resize(length);
  for (std::size_t i = 0; i < length; ++i) clip.samples[i] = static_cast<float>(x[i] * scale);
  clip.original_len = length;
  clip.category_id = category;
  clip.label = label_for_category(category);
  char name[32];
  std::snprintf(name, sizeof(name), "c%d_%04d", category, index);
  clip.source_id = name;
  return clip;
}

/// Writes `out_dir/<category>/c<category>_<index>.wav` for every requested
/// clip and returns the paths written.
inline std::vector<std::filesystem::path> synth_corpus(const SynthSpec& spec,
                                                       const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::size_t min_len = seconds_to_samples(spec.min_duration_s);
  if (spec.max_len_samples < min_len) throw ParamOutOfRange("max_len_samples below minimum duration");
  std::vector<std::filesystem::path> written;
  bool first = true;
  for (const auto& [category, count] : spec.counts) {
    if (count < 0) throw ParamOutOfRange("negative clip count");
    for (int i = 0; i < count; ++i) {
      Rng rng(derive_seed(spec.seed, "duration", category, i));
      // Log-uniform: short recordings are common, long ones rare.
      const double log_len = uniform(rng, std::log(static_cast<double>(min_len)),
                                     std::log(static_cast<double>(spec.max_len_samples)));
      std::size_t length = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(std::exp(log_len))),
                                                   min_len, spec.max_len_samples);
      if (first) length = spec.max_len_samples;
      first = false;
      const AudioClip clip = synth_clip(category, i, length, spec.seed);
      auto path = out_dir / std::to_string(category) / (clip.source_id + ".wav");
      write_wav(path, clip);
      written.push_back(std::move(path));
    }
  }
  return written;
}

}  // namespace falldet
