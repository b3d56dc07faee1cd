#pragma once

// Flat binary feature file:
//
//   offset  size  field
//   0       4     magic "FDFM"
//   4       4     kind (u32, FeatureKind)
//   8       8     N (u64, frames)
//   16      8     D (u64, dims)
//   24      8     mask offset (u64) = 32 + 4*N*D
//   32      4*N*D row-major float32 values
//   mask    N     one byte per frame (1 = valid)
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <vector>

#include "falldet/audio/wav.hpp"
#include "falldet/error.hpp"
#include "falldet/features/feature_matrix.hpp"

namespace falldet {

static_assert(std::endian::native == std::endian::little, "feature cache assumes a little-endian host");

inline constexpr char kFeatureMagic[4] = {'F', 'D', 'F', 'M'};
inline constexpr std::size_t kFeatureHeaderBytes = 32;

inline std::vector<std::uint8_t> encode_feature_file(const FeatureMatrix& m) {
  const std::uint64_t n = m.rows, d = m.cols;
  const std::uint64_t mask_offset = kFeatureHeaderBytes + 4 * n * d;
  std::vector<std::uint8_t> out(mask_offset + n);
  std::memcpy(out.data(), kFeatureMagic, 4);
  const auto kind = static_cast<std::uint32_t>(m.kind);
  std::memcpy(out.data() + 4, &kind, 4);
  std::memcpy(out.data() + 8, &n, 8);
  std::memcpy(out.data() + 16, &d, 8);
  std::memcpy(out.data() + 24, &mask_offset, 8);
  std::memcpy(out.data() + kFeatureHeaderBytes, m.data.data(), 4 * n * d);
  std::memcpy(out.data() + mask_offset, m.mask.data(), n);
  return out;
}

inline FeatureMatrix decode_feature_file(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFeatureHeaderBytes || std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) {
    throw MalformedFeatureCache("bad magic or short header");
  }
  std::uint32_t kind = 0;
  std::uint64_t n = 0, d = 0, mask_offset = 0;
  std::memcpy(&kind, bytes.data() + 4, 4);
  std::memcpy(&n, bytes.data() + 8, 8);
  std::memcpy(&d, bytes.data() + 16, 8);
  std::memcpy(&mask_offset, bytes.data() + 24, 8);
  if (kind > static_cast<std::uint32_t>(FeatureKind::Combined)) throw MalformedFeatureCache("unknown kind");
  if (d != 0 && n > (bytes.size() / 4) / d) throw MalformedFeatureCache("dimensions exceed file size");
  if (mask_offset != kFeatureHeaderBytes + 4 * n * d || bytes.size() != mask_offset + n) {
    throw MalformedFeatureCache("inconsistent mask offset or truncated file");
  }
  FeatureMatrix m(n, d, static_cast<FeatureKind>(kind));
  std::memcpy(m.data.data(), bytes.data() + kFeatureHeaderBytes, 4 * n * d);
  std::memcpy(m.mask.data(), bytes.data() + mask_offset, n);
  for (auto& v : m.mask) v = v ? 1 : 0;
  return m;
}

inline void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& m) {
  detail::write_file(path, encode_feature_file(m));
}

inline FeatureMatrix read_feature_file(const std::filesystem::path& path) {
  return decode_feature_file(detail::read_file(path));
}

}  // namespace falldet
