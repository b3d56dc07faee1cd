#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "falldet/audio/clip.hpp"
#include "falldet/audio/resample.hpp"
#include "falldet/error.hpp"

namespace falldet {

/// Format fields from a RIFF/WAVE header.
struct WavInfo {
  int channels = 0;
  int sample_rate = 0;
  int bits_per_sample = 0;
  std::size_t frames = 0;
  std::size_t data_offset = 0;
};

namespace detail {

inline std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace detail

/// Parses the RIFF header. Accepts PCM (format 1) and WAVE_FORMAT_EXTENSIBLE
/// with a PCM subformat at 8, 16 or 24 bits.
/// `total_size` is the full file size when `bytes` holds only a prefix.
inline WavInfo parse_wav_header(std::span<const std::uint8_t> bytes, std::size_t total_size = 0) {
  if (total_size == 0) total_size = bytes.size();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw MalformedWav("missing RIFF/WAVE signature");
  }
  WavInfo info;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = detail::read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) throw MalformedWav("truncated fmt chunk");
      const std::uint8_t* f = bytes.data() + body;
      std::uint16_t format = detail::read_u16(f);
      info.channels = detail::read_u16(f + 2);
      info.sample_rate = static_cast<int>(detail::read_u32(f + 4));
      info.bits_per_sample = detail::read_u16(f + 14);
      if (format == 0xFFFE) {
        if (size < 40) throw MalformedWav("truncated extensible fmt chunk");
        format = detail::read_u16(f + 24);  // first two bytes of the subformat GUID
      }
      if (format != 1) {
        throw UnsupportedEncoding("WAV format code " + std::to_string(format) + " is not PCM");
      }
      if (info.bits_per_sample != 8 && info.bits_per_sample != 16 &&
          info.bits_per_sample != 24) {
        throw UnsupportedEncoding(std::to_string(info.bits_per_sample) + "-bit PCM");
      }
      if (info.channels < 1 || info.sample_rate < 1) throw MalformedWav("bad channel count or rate");
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw MalformedWav("data chunk before fmt chunk");
      if (body + size > total_size) throw MalformedWav("truncated data chunk");
      const std::size_t frame_bytes =
          static_cast<std::size_t>(info.channels) * (info.bits_per_sample / 8);
      info.frames = size / frame_bytes;
      info.data_offset = body;
      return info;
    }
    pos = body + size + (size & 1u);
  }
  throw MalformedWav(have_fmt ? "no data chunk" : "no fmt chunk");
}

/// Decodes PCM bytes to mono floats in [-1, 1] at the file's own rate.
inline std::vector<float> decode_pcm_mono(std::span<const std::uint8_t> bytes, const WavInfo& info) {
  const int bps = info.bits_per_sample / 8;
  const std::uint8_t* p = bytes.data() + info.data_offset;
  std::vector<float> mono(info.frames);
  for (std::size_t i = 0; i < info.frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < info.channels; ++c, p += bps) {
      switch (bps) {
        case 1:
          acc += (static_cast<int>(p[0]) - 128) / 128.0;
          break;
        case 2:
          acc += static_cast<std::int16_t>(detail::read_u16(p)) / 32768.0;
          break;
        default: {
          std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
          if (v & 0x800000) v |= ~0xFFFFFF;
          acc += v / 8388608.0;
        }
      }
    }
    mono[i] = static_cast<float>(acc / info.channels);
  }
  return mono;
}

/// Reads a PCM WAV file, mixes to mono and resamples to 16 kHz.
inline AudioClip decode_wav(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const WavInfo info = parse_wav_header(bytes);
  AudioClip clip;
  clip.samples = resample(decode_pcm_mono(bytes, info), info.sample_rate, kSampleRate);
  clip.sample_rate_hz = kSampleRate;
  clip.original_len = clip.samples.size();
  clip.source_id = path.stem().string();
  return clip;
}

/// Sample count `decode_wav` would produce, from the header alone.
inline std::size_t probe_wav_length(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  // Headers written by real tools can carry LIST/fact chunks; 64 KiB is ample.
  std::vector<std::uint8_t> head(65536);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::size_t>(in.tellg());
  const WavInfo info = parse_wav_header(head, file_size);
  return PolyphaseResampler::output_length(info.frames, info.sample_rate, kSampleRate);
}

/// Encodes mono floats as 16-bit (or 8/24-bit) PCM. Values are clamped to
/// [-1, 1] and rounded to the nearest code.
inline std::vector<std::uint8_t> encode_wav(std::span<const float> samples, int sample_rate,
                                            int bits_per_sample = 16, int channels = 1) {
  if (bits_per_sample != 8 && bits_per_sample != 16 && bits_per_sample != 24) {
    throw UnsupportedEncoding(std::to_string(bits_per_sample) + "-bit PCM");
  }
  const std::uint32_t bps = static_cast<std::uint32_t>(bits_per_sample / 8);
  const std::uint32_t data_size =
      static_cast<std::uint32_t>(samples.size()) * bps * static_cast<std::uint32_t>(channels);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, static_cast<std::uint16_t>(channels));
  detail::put_u32(out, static_cast<std::uint32_t>(sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(sample_rate) * bps * static_cast<std::uint32_t>(channels));
  detail::put_u16(out, static_cast<std::uint16_t>(bps * static_cast<std::uint32_t>(channels)));
  detail::put_u16(out, static_cast<std::uint16_t>(bits_per_sample));
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_u32(out, data_size);
  const double full_scale = std::ldexp(1.0, bits_per_sample - 1);
  for (float s : samples) {
    const double x = std::clamp(static_cast<double>(s), -1.0, 1.0);
    const auto code = static_cast<std::int32_t>(
        std::clamp(std::lround(x * full_scale), -static_cast<long>(full_scale),
                   static_cast<long>(full_scale) - 1));
    for (int c = 0; c < channels; ++c) {
      if (bps == 1) {
        out.push_back(static_cast<std::uint8_t>(code + 128));
      } else {
        for (std::uint32_t b = 0; b < bps; ++b) {
          out.push_back(static_cast<std::uint8_t>((static_cast<std::uint32_t>(code) >> (8 * b)) & 0xff));
        }
      }
    }
  }
  return out;
}

/// Writes the unpadded part of a clip as 16-bit PCM mono.
inline void write_wav(const std::filesystem::path& path, const AudioClip& clip, int bits = 16) {
  const auto bytes = encode_wav(std::span<const float>(clip.samples.data(), clip.original_len),
                                clip.sample_rate_hz, bits);
  detail::write_file(path, bytes);
}

}  // namespace falldet
