#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "falldet/error.hpp"

namespace falldet {

enum class FeatureKind : std::uint32_t { SegmentedRaw = 0, Diff = 1, LogMel = 2, Combined = 3 };

inline std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::SegmentedRaw: return "raw";
    case FeatureKind::Diff: return "diff";
    case FeatureKind::LogMel: return "logmel";
    case FeatureKind::Combined: return "combined";
  }
  return "raw";
}

inline FeatureKind parse_feature_kind(std::string_view text) {
  if (text == "raw") return FeatureKind::SegmentedRaw;
  if (text == "diff") return FeatureKind::Diff;
  if (text == "logmel") return FeatureKind::LogMel;
  if (text == "combined") return FeatureKind::Combined;
  throw ParamOutOfRange("unknown feature kind '" + std::string(text) + "'");
}

/// Extraction parameters recorded alongside a matrix. Unused fields are 0.
struct FeatureMeta {
  int t_seg_ms = 0;
  int n_fft = 0;
  int hop = 0;
  int n_mels = 0;

  bool operator==(const FeatureMeta&) const = default;
};

/// Frames x dims matrix (row-major) with a per-frame validity mask.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;
  std::vector<std::uint8_t> mask;  // 1 = valid frame
  FeatureKind kind = FeatureKind::SegmentedRaw;
  FeatureMeta meta;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c, FeatureKind k)
      : rows(r), cols(c), data(r * c, 0.0f), mask(r, 1), kind(k) {}

  std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool valid(std::size_t r) const { return mask[r] != 0; }

  std::size_t valid_frames() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }

  std::string shape_string() const { return std::to_string(rows) + "x" + std::to_string(cols); }
};

}  // namespace falldet
