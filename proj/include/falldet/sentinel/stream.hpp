#pragma once

// Streaming inference: capture -> sliding windows -> classifier -> alerts.
//
// Capture, inference and dispatch run on separate threads joined by bounded
// queues. Each window is padded and featurized exactly like a training clip,
// so its probability matches offline evaluation of the same samples.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "falldet/audio/clip.hpp"
#include "falldet/audio/wav.hpp"
#include "falldet/error.hpp"
#include "falldet/features/features.hpp"
#include "falldet/nn/checkpoint.hpp"
#include "falldet/sentinel/alert.hpp"
#include "falldet/sentinel/queue.hpp"

namespace falldet::sentinel {

/// Full windows in a stream of `total` samples; a stream shorter than one
/// window still yields one (padded) window.
inline std::size_t window_count(std::size_t total, std::size_t window, std::size_t stride) {
  if (total == 0 || window == 0 || stride == 0) return 0;
  if (total < window) return 1;
  return (total - window) / stride + 1;
}

struct Window {
  std::size_t start = 0;  // absolute sample index
  std::vector<float> samples;
};

/// Cuts an incoming sample stream into windows of `window` samples every
/// `stride` samples.
class WindowAssembler {
 public:
  WindowAssembler(std::size_t window, std::size_t stride) : window_(window), stride_(stride) {
    if (window == 0 || stride == 0 || stride > window) throw InvalidConfig("need 0 < stride <= window");
  }

  void push(std::span<const float> chunk, std::vector<Window>& out) {
    buf_.insert(buf_.end(), chunk.begin(), chunk.end());
    while (next_ + window_ <= buf_start_ + buf_.size()) {
      const std::size_t off = next_ - buf_start_;
      out.push_back({next_, std::vector<float>(buf_.begin() + static_cast<std::ptrdiff_t>(off),
                                               buf_.begin() + static_cast<std::ptrdiff_t>(off + window_))});
      emitted_ = true;
      next_ += stride_;
    }
    if (next_ > buf_start_) {
      const std::size_t drop = std::min(next_ - buf_start_, buf_.size());
      buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(drop));
      buf_start_ += drop;
    }
  }

  /// Discards buffered audio; the next window starts at `position`.
  void reset(std::size_t position) {
    buf_.clear();
    buf_start_ = next_ = position;
    emitted_ = false;
  }

  /// End of stream: the buffered tail as one short window if nothing was
  /// emitted since the last reset.
  std::optional<Window> flush() {
    if (emitted_ || buf_.empty()) return std::nullopt;
    emitted_ = true;
    return Window{buf_start_, buf_};
  }

 private:
  std::size_t window_, stride_;
  std::vector<float> buf_;
  std::size_t buf_start_ = 0, next_ = 0;
  bool emitted_ = false;
};

/// A loaded checkpoint plus the ingestion rules it was trained with.
class WindowClassifier {
 public:
  explicit WindowClassifier(nn::LoadedModel<float> loaded) : loaded_(std::move(loaded)) {}

  static WindowClassifier from_checkpoint(const std::filesystem::path& path) {
    return WindowClassifier(nn::load_checkpoint<float>(path));
  }

  std::size_t target_len() const { return loaded_.target_len; }
  const FeatureSpec& features() const { return loaded_.features; }
  nn::TransformerClassifier<float>& model() { return loaded_.model; }

  /// p_fall of one window; `samples` are 16 kHz and no longer than the
  /// checkpoint's clip length.
  double classify(std::span<const float> samples) {
    if (samples.size() > loaded_.target_len) throw CheckpointMismatch("window longer than the trained clip length");
    AudioClip clip;
    clip.samples.assign(samples.begin(), samples.end());
    clip.original_len = samples.size();
    const FeatureMatrix x = extract_features(pad_to_length(std::move(clip), loaded_.target_len), loaded_.features);
    if (static_cast<int>(x.cols) != loaded_.model.config().input_dim)
      throw CheckpointMismatch("feature width disagrees with the checkpoint");
    return loaded_.model.predict(x)[nn::kFallIndex];
  }

 private:
  nn::LoadedModel<float> loaded_;
};

class AudioSource {
 public:
  virtual ~AudioSource() = default;
  /// Up to `max` samples at 16 kHz; an empty result means end of stream.
  virtual std::vector<float> read(std::size_t max) = 0;
};

/// A WAV file, decoded and resampled like a corpus clip.
class FileSource : public AudioSource {
 public:
  explicit FileSource(const std::filesystem::path& path) : samples_(decode_wav(path).samples) {}
  explicit FileSource(std::vector<float> samples) : samples_(std::move(samples)) {}

  std::vector<float> read(std::size_t max) override {
    const std::size_t n = std::min(max, samples_.size() - pos_);
    std::vector<float> out(samples_.begin() + static_cast<std::ptrdiff_t>(pos_),
                           samples_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }

 private:
  std::vector<float> samples_;
  std::size_t pos_ = 0;
};

/// Raw little-endian 16-bit mono PCM at 16 kHz, e.g. piped from arecord.
class PcmStreamSource : public AudioSource {
 public:
  explicit PcmStreamSource(std::istream& in) : in_(in) {}

  std::vector<float> read(std::size_t max) override {
    std::vector<char> bytes(max * 2);
    in_.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    const std::size_t n = static_cast<std::size_t>(in_.gcount()) / 2;
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto lo = static_cast<std::uint8_t>(bytes[2 * i]), hi = static_cast<std::uint8_t>(bytes[2 * i + 1]);
      out[i] = static_cast<float>(static_cast<std::int16_t>(lo | (hi << 8))) / 32768.0f;
    }
    return out;
  }

 private:
  std::istream& in_;
};

struct SentinelOptions {
  double window_s = 8.735;
  double stride_s = 4.0;
  double threshold = 0.5;
  double refractory_s = 30.0;
  std::size_t chunk_samples = 1600;
  std::size_t capture_queue = 64;
  Overflow capture_overflow = Overflow::Block;
  std::size_t alert_queue = 16;
  RetryPolicy retry;
  Sleeper sleep = real_sleep;
  std::string device_id = "falldet";
};

struct WindowResult {
  double start_s = 0, end_s = 0;
  double fall_probability = 0;
};

struct SentinelStats {
  std::vector<WindowResult> windows;
  std::size_t sent = 0, failed = 0, suppressed = 0;
  std::size_t dropped_chunks = 0, dropped_alerts = 0, underruns = 0;
};

inline std::size_t window_samples(double seconds) {
  return static_cast<std::size_t>(std::llround(seconds * kSampleRate));
}

/// Runs capture, inference and dispatch until the source ends (or `stop`
/// is set). JSON lines describing windows and alerts go to `log`.
inline SentinelStats run_sentinel(AudioSource& source, WindowClassifier& classifier, AlertTransport* transport,
                                  const SentinelOptions& opt, std::ostream& log,
                                  std::atomic<bool>* stop = nullptr) {
  const std::size_t window = window_samples(opt.window_s), stride = window_samples(opt.stride_s);
  if (window == 0 || stride == 0 || stride > window) throw InvalidConfig("need 0 < stride <= window");
  if (window > classifier.target_len()) {
    throw CheckpointMismatch("window of " + std::to_string(window) + " samples exceeds the checkpoint's " +
                             std::to_string(classifier.target_len()));
  }
  if (opt.threshold < 0.0 || opt.threshold > 1.0) throw InvalidConfig("threshold must lie in [0, 1]");

  struct Chunk {
    std::uint64_t seq = 0;
    std::size_t start = 0;
    std::vector<float> samples;
  };
  BoundedQueue<Chunk> chunks(opt.capture_queue, opt.capture_overflow);
  BoundedQueue<AlertEvent> alerts(opt.alert_queue, Overflow::DropOldest);
  std::mutex log_mu;
  auto emit = [&](const nlohmann::json& j) {
    std::lock_guard lock(log_mu);
    log << j.dump() << '\n';
    log.flush();
  };
  const auto t0 = std::chrono::steady_clock::now();
  auto now_s = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  SentinelStats stats;
  std::atomic<std::size_t> sent{0}, failed{0};

  std::thread capture([&] {
    std::uint64_t seq = 0;
    std::size_t pos = 0;
    while (!(stop && stop->load())) {
      std::vector<float> s = source.read(opt.chunk_samples);
      if (s.empty()) break;
      const std::size_t n = s.size();
      if (!chunks.push({seq++, pos, std::move(s)})) break;
      pos += n;
    }
    chunks.close();
  });

  std::thread dispatch([&] {
    while (auto ev = alerts.pop()) {
      if (transport) {
        dispatch_alert(*ev, *transport, opt.device_id, opt.retry, opt.sleep);
      } else {
        ev->dispatched_to = "none";
        ev->status = AlertStatus::Failed;
      }
      (ev->status == AlertStatus::Sent ? sent : failed)++;
      emit(event_record(*ev));
    }
  });

  WindowAssembler assembler(window, stride);
  Debouncer debounce(opt.refractory_s);
  std::vector<Window> ready;
  std::uint64_t expected = 0;
  auto classify = [&](const Window& w) {
    WindowResult r;
    r.start_s = static_cast<double>(w.start) / kSampleRate;
    r.end_s = static_cast<double>(w.start + w.samples.size()) / kSampleRate;
    r.fall_probability = classifier.classify(w.samples);
    stats.windows.push_back(r);
    emit({{"type", "window"}, {"start_s", r.start_s}, {"end_s", r.end_s}, {"fall_probability", r.fall_probability}});
    if (r.fall_probability < opt.threshold) return;
    AlertEvent ev;
    ev.monotonic_s = now_s();
    ev.wall_clock = utc_now_iso8601();
    ev.window_start_s = r.start_s;
    ev.window_end_s = r.end_s;
    ev.fall_probability = r.fall_probability;
    if (!debounce.admit(r.end_s)) {
      ev.status = AlertStatus::Suppressed;
      ++stats.suppressed;
      emit(event_record(ev));
      return;
    }
    alerts.push(std::move(ev));
  };

  try {
    while (auto c = chunks.pop()) {
      if (c->seq != expected) {
        ++stats.underruns;
        emit({{"type", "underrun"},
              {"error", "StreamUnderrun"},
              {"missing_chunks", c->seq - expected},
              {"resume_s", static_cast<double>(c->start) / kSampleRate}});
        assembler.reset(c->start);
      }
      expected = c->seq + 1;
      ready.clear();
      assembler.push(c->samples, ready);
      for (const Window& w : ready) classify(w);
    }
    if (auto tail = assembler.flush()) classify(*tail);
  } catch (...) {
    chunks.close();
    alerts.close();
    capture.join();
    dispatch.join();
    throw;
  }
  capture.join();
  alerts.close();
  dispatch.join();
  stats.sent = sent;
  stats.failed = failed;
  stats.dropped_chunks = chunks.dropped();
  stats.dropped_alerts = alerts.dropped();
  return stats;
}

}  // namespace falldet::sentinel
