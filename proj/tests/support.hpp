#pragma once

#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <unistd.h>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "falldet/audio/clip.hpp"

namespace testing_support {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("falldet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

inline std::vector<float> tone(double hz, double seconds, int rate, double amp = 0.5) {
  const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
  std::vector<float> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate));
  return x;
}

/// |X[k]|^2 by the defining sum, k = 0..n/2.
inline std::vector<double> naive_power_spectrum(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> p(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t t = 0; t < n; ++t)
      acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / n);
    p[k] = std::norm(acc);
  }
  return p;
}

inline falldet::AudioClip make_clip(std::vector<float> samples, int category = 5) {
  falldet::AudioClip c;
  c.original_len = samples.size();
  c.samples = std::move(samples);
  c.category_id = category;
  c.label = falldet::label_for_category(category);
  c.source_id = "test";
  return c;
}

inline std::vector<float> noise(std::size_t n, unsigned seed, double amp = 0.3) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> d(-amp, amp);
  std::vector<float> x(n);
  for (auto& v : x) v = static_cast<float>(d(rng));
  return x;
}

}  // namespace testing_support
