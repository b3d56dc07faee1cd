#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <mutex>
#include <vector>

#include "falldet/audio/clip.hpp"
#include "falldet/audio/manifest.hpp"
#include "falldet/error.hpp"
#include "falldet/features/features.hpp"

namespace falldet::nn {

/// Indexed labelled feature matrices.
class ExampleSource {
 public:
  virtual ~ExampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual Label label(std::size_t i) const = 0;
  virtual int category(std::size_t i) const = 0;
  virtual std::shared_ptr<const FeatureMatrix> features(std::size_t i) const = 0;

  std::size_t count(Label l) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < size(); ++i) n += label(i) == l;
    return n;
  }
};

class InMemorySource : public ExampleSource {
 public:
  void add(FeatureMatrix x, Label label, int category = 0) {
    items_.push_back({std::make_shared<const FeatureMatrix>(std::move(x)), label, category});
  }

  std::size_t size() const override { return items_.size(); }
  Label label(std::size_t i) const override { return items_.at(i).label; }
  int category(std::size_t i) const override { return items_.at(i).category; }
  std::shared_ptr<const FeatureMatrix> features(std::size_t i) const override { return items_.at(i).x; }

 private:
  struct Item {
    std::shared_ptr<const FeatureMatrix> x;
    Label label;
    int category;
  };
  std::vector<Item> items_;
};

/// Decodes, pads and featurizes one manifest split on demand. With
/// `cache` set, extracted features stay resident.
class ManifestSource : public ExampleSource {
 public:
  ManifestSource(const DatasetManifest& manifest, Split split, FeatureSpec spec, std::size_t target_len,
                 bool cache = false)
      : spec_(spec), target_len_(target_len), cache_enabled_(cache) {
    for (const auto* e : manifest.select(split)) entries_.push_back(*e);
    cache_.resize(entries_.size());
  }

  std::size_t size() const override { return entries_.size(); }
  Label label(std::size_t i) const override { return entries_.at(i).label; }
  int category(std::size_t i) const override { return entries_.at(i).category_id; }
  const ManifestEntry& entry(std::size_t i) const { return entries_.at(i); }

  std::shared_ptr<const FeatureMatrix> features(std::size_t i) const override {
    if (cache_enabled_) {
      std::lock_guard lock(mutex_);
      if (cache_.at(i)) return cache_[i];
    }
    auto x = std::make_shared<const FeatureMatrix>(
        extract_features(pad_to_length(load_clip(entries_.at(i)), target_len_), spec_));
    if (cache_enabled_) {
      std::lock_guard lock(mutex_);
      cache_[i] = x;
    }
    return x;
  }

 private:
  std::vector<ManifestEntry> entries_;
  FeatureSpec spec_;
  std::size_t target_len_;
  bool cache_enabled_;
  mutable std::mutex mutex_;
  mutable std::vector<std::shared_ptr<const FeatureMatrix>> cache_;
};

/// Factor that brings the RMS of valid feature values to 1, estimated from
/// up to `max_examples` evenly spaced examples. 1 for silent sources.
inline double unit_rms_scale(const ExampleSource& src, std::size_t max_examples = 256) {
  const std::size_t n = src.size();
  if (n == 0) return 1.0;
  const std::size_t step = std::max<std::size_t>(1, n / max_examples);
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; i += step) {
    const auto x = src.features(i);
    for (std::size_t r = 0; r < x->rows; ++r) {
      if (!x->valid(r)) continue;
      for (float v : x->row(r)) sum += static_cast<double>(v) * v;
      count += x->cols;
    }
  }
  const double rms = count ? std::sqrt(sum / static_cast<double>(count)) : 0.0;
  return rms > 0.0 && std::isfinite(rms) ? 1.0 / rms : 1.0;
}

}  // namespace falldet::nn
