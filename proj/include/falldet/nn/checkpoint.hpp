#pragma once

// Checkpoint layout (little-endian):
//
//   "FDCK"  u32 version  u32 header_len  header_len bytes of JSON
//   u32 n_params, then per parameter:
//     u16 name_len  name  u32 rows  u32 cols  rows*cols float32
//   u32 CRC-32 of every preceding byte
//
// The JSON header carries the model config, the feature spec and the
// target clip length, so a checkpoint is enough to run inference.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "falldet/audio/wav.hpp"
#include "falldet/error.hpp"
#include "falldet/features/features.hpp"
#include "falldet/nn/config.hpp"
#include "falldet/nn/model.hpp"

namespace falldet::nn {

inline constexpr char kCheckpointMagic[4] = {'F', 'D', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  ModelConfig model;
  FeatureSpec features;
  std::size_t target_len = 0;
};

template <class T>
struct LoadedModel {
  TransformerClassifier<T> model;
  FeatureSpec features;
  std::size_t target_len = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

template <class T>
std::vector<std::uint8_t> encode_checkpoint(const TransformerClassifier<T>& model, const FeatureSpec& features,
                                            std::size_t target_len, std::uint32_t version = kCheckpointVersion) {
  for (const auto& p : model.params())
    if (!p.value.allFinite()) throw NonFiniteActivation("refusing to save non-finite parameter " + p.name);
  nlohmann::json header = {{"model", to_json(model.config())},
                           {"features", falldet::to_json(features)},
                           {"target_len", target_len}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  falldet::detail::put_u32(out, version);
  falldet::detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  falldet::detail::put_u32(out, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    falldet::detail::put_u16(out, static_cast<std::uint16_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    falldet::detail::put_u32(out, static_cast<std::uint32_t>(p.value.rows()));
    falldet::detail::put_u32(out, static_cast<std::uint32_t>(p.value.cols()));
    const std::size_t at = out.size();
    out.resize(at + 4 * static_cast<std::size_t>(p.value.size()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const float f = static_cast<float>(p.value.data()[i]);
      std::memcpy(out.data() + at + 4 * static_cast<std::size_t>(i), &f, 4);
    }
  }
  falldet::detail::put_u32(out, crc32_of(out.data(), out.size()));
  return out;
}

namespace detail {

struct CheckpointReader {
  const std::uint8_t* p;
  const std::uint8_t* end;

  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end - p) < n) throw ChecksumMismatch("checkpoint body truncated");
  }
  std::uint32_t u32() {
    need(4);
    const std::uint32_t v = falldet::detail::read_u32(p);
    p += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = falldet::detail::read_u16(p);
    p += 2;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    return s;
  }
};

}  // namespace detail

/// Validates framing, checksum and version, and returns the header.
inline CheckpointMeta decode_checkpoint_meta(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw ChecksumMismatch("checkpoint too short");
  const std::size_t body = bytes.size() - 4;
  if (crc32_of(bytes.data(), body) != falldet::detail::read_u32(bytes.data() + body)) {
    throw ChecksumMismatch("checkpoint CRC mismatch (corrupt or truncated)");
  }
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw ChecksumMismatch("not a checkpoint file");
  detail::CheckpointReader r{bytes.data() + 4, bytes.data() + body};
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  const std::string text = r.str(r.u32());
  try {
    const auto header = nlohmann::json::parse(text);
    CheckpointMeta meta;
    meta.model = model_config_from_json(header.at("model"));
    meta.features = feature_spec_from_json(header.at("features"));
    meta.target_len = header.at("target_len").get<std::size_t>();
    return meta;
  } catch (const nlohmann::json::exception& e) {
    throw ChecksumMismatch(std::string("checkpoint header: ") + e.what());
  }
}

template <class T = float>
LoadedModel<T> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  CheckpointMeta meta = decode_checkpoint_meta(bytes);
  LoadedModel<T> out{TransformerClassifier<T>(meta.model), meta.features, meta.target_len};
  detail::CheckpointReader r{bytes.data() + 4, bytes.data() + bytes.size() - 4};
  r.u32();
  r.str(r.u32());
  const std::uint32_t n = r.u32();
  auto& params = out.model.params();
  if (n != params.size()) throw CheckpointMismatch("parameter count differs from config");
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str(r.u16());
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (!params.contains(name)) throw CheckpointMismatch("unexpected parameter " + name);
    auto& prm = params.at(name);
    if (prm.value.rows() != rows || prm.value.cols() != cols) throw CheckpointMismatch("shape of " + name);
    r.need(4ull * rows * cols);
    for (Eigen::Index k = 0; k < prm.value.size(); ++k) {
      float f;
      std::memcpy(&f, r.p + 4 * k, 4);
      prm.value.data()[k] = static_cast<T>(f);
    }
    r.p += 4ull * rows * cols;
  }
  return out;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const TransformerClassifier<T>& model,
                     const FeatureSpec& features, std::size_t target_len) {
  falldet::detail::write_file(path, encode_checkpoint(model, features, target_len));
}

template <class T = float>
LoadedModel<T> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<T>(falldet::detail::read_file(path));
}

}  // namespace falldet::nn
