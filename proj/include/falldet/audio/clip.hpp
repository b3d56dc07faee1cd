#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "falldet/error.hpp"

namespace falldet {

inline constexpr int kSampleRate = 16000;

/// Class index order is fixed: 0 = Fall (positive), 1 = NoFall.
enum class Label { Fall = 0, NoFall = 1 };

inline constexpr std::array<int, 8> kCategories = {1, 2, 3, 4, 5, 6, 8, 9};
inline constexpr std::array<int, 5> kFallCategories = {1, 3, 6, 8, 9};
inline constexpr std::array<int, 3> kNoFallCategories = {2, 4, 5};

inline bool is_valid_category(int id) {
  return std::find(kCategories.begin(), kCategories.end(), id) != kCategories.end();
}

/// Scenario taxonomy: categories 1, 3, 6, 8, 9 are falls; 2, 4, 5 are not.
inline Label label_for_category(int id) {
  if (!is_valid_category(id)) {
    throw MalformedManifest("unknown category id " + std::to_string(id));
  }
  return std::find(kFallCategories.begin(), kFallCategories.end(), id) !=
                 kFallCategories.end()
             ? Label::Fall
             : Label::NoFall;
}

inline std::string_view to_string(Label label) {
  return label == Label::Fall ? "fall" : "nofall";
}

inline Label parse_label(std::string_view text) {
  if (text == "fall") return Label::Fall;
  if (text == "nofall") return Label::NoFall;
  throw MalformedManifest("unknown label '" + std::string(text) + "'");
}

/// Mono waveform at 16 kHz. Samples past `original_len` are zero padding.
struct AudioClip {
  std::vector<float> samples;
  int sample_rate_hz = kSampleRate;
  std::size_t original_len = 0;
  int category_id = 0;
  Label label = Label::NoFall;
  std::string source_id;
  std::optional<std::string> augment_tag;

  std::size_t size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
};

/// Zero-pads `clip` to exactly `target_len` samples; original_len is kept.
inline AudioClip pad_to_length(AudioClip clip, std::size_t target_len) {
  if (clip.samples.size() > target_len) {
    throw ClipTooLong("clip '" + clip.source_id + "' has " +
                      std::to_string(clip.samples.size()) +
                      " samples, target is " + std::to_string(target_len));
  }
  clip.samples.resize(target_len, 0.0f);
  return clip;
}

/// Sample count of `seconds` at 16 kHz, rounded to the nearest sample.
inline std::size_t seconds_to_samples(double seconds) {
  return static_cast<std::size_t>(std::max(0.0, seconds * kSampleRate + 0.5));
}

}  // namespace falldet
