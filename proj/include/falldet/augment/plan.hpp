#pragma once

// Augmentation plans and corpus expansion.
//
// Plan file: one JSON object per line,
//   {"name": "...", "transform": "gain" | ... | "composite",
//    "params": {...}, "scope": "any" | "nofall_only", "seed": N,
//    "steps": [{"transform": ..., "params": {...}}, ...]}

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "falldet/audio/manifest.hpp"
#include "falldet/audio/wav.hpp"
#include "falldet/augment/transforms.hpp"
#include "falldet/error.hpp"

namespace falldet::augment {

using Plan = std::vector<AugmentationSpec>;

inline nlohmann::json to_json(const AugmentationSpec& s) {
  nlohmann::json j = {{"name", s.name}, {"transform", s.transform}, {"params", s.params},
                      {"scope", to_string(s.scope)}, {"seed", s.seed}};
  if (!s.steps.empty()) {
    j["steps"] = nlohmann::json::array();
    for (const auto& st : s.steps) j["steps"].push_back({{"transform", st.transform}, {"params", st.params}});
  }
  return j;
}

inline AugmentationSpec spec_from_json(const nlohmann::json& j) {
  AugmentationSpec s;
  s.name = j.at("name").get<std::string>();
  s.transform = j.at("transform").get<std::string>();
  s.params = j.value("params", nlohmann::json::object());
  s.scope = parse_scope(j.value("scope", std::string("any")));
  s.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("steps")) {
    for (const auto& st : j.at("steps")) {
      AugmentationSpec step;
      step.name = s.name;
      step.transform = st.at("transform").get<std::string>();
      step.params = st.value("params", nlohmann::json::object());
      step.scope = s.scope;
      step.seed = s.seed;
      s.steps.push_back(std::move(step));
    }
  }
  validate_spec(s);
  return s;
}

inline std::string plan_to_string(const Plan& plan) {
  std::string out;
  for (const auto& s : plan) out += to_json(s).dump() + "\n";
  return out;
}

inline Plan plan_from_string(const std::string& text) {
  Plan plan;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      plan.push_back(spec_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParamOutOfRange("plan line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return plan;
}

inline void write_plan(const std::filesystem::path& path, const Plan& plan) {
  const std::string text = plan_to_string(plan);
  falldet::detail::write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

inline Plan read_plan(const std::filesystem::path& path) {
  const auto bytes = falldet::detail::read_file(path);
  return plan_from_string(std::string(bytes.begin(), bytes.end()));
}

namespace detail {

inline AugmentationSpec atomic(std::string name, std::string transform, nlohmann::json params, Scope scope,
                               std::uint64_t seed) {
  return {std::move(name), std::move(transform), std::move(params), scope, seed, {}};
}

inline AugmentationSpec composite(std::string name, std::vector<std::pair<std::string, nlohmann::json>> steps,
                                  std::uint64_t seed) {
  AugmentationSpec s{std::move(name), "composite", nlohmann::json::object(), Scope::AnyClass, seed, {}};
  for (auto& [t, p] : steps) s.steps.push_back(atomic(s.name, t, p, Scope::AnyClass, seed));
  s.scope = natural_scope(s);
  for (auto& st : s.steps) st.scope = s.scope;
  return s;
}

}  // namespace detail

/// The 14 fall-safe specs. Length-increasing settings keep the input length
/// so the corpus maximum never grows.
inline Plan default_fall_plan(std::uint64_t seed = 2023) {
  using detail::atomic;
  using detail::composite;
  using J = nlohmann::json;
  const Scope any = Scope::AnyClass;
  return {
      atomic("gain", "gain", {{"min_gain_db", -12.0}, {"max_gain_db", -2.0}}, any, seed),
      atomic("gaussian_noise_low", "gaussian_noise", {{"min_amplitude", 0.001}, {"max_amplitude", 0.005}}, any, seed),
      atomic("gaussian_noise_high", "gaussian_noise", {{"min_amplitude", 0.005}, {"max_amplitude", 0.015}}, any, seed),
      atomic("gain_transition", "gain_transition", J::object(), any, seed),
      atomic("loudness_normalize", "loudness_normalize", J::object(), any, seed),
      atomic("pitch_shift_up", "pitch_shift", {{"min_semitones", 0.5}, {"max_semitones", 2.0}}, any, seed),
      atomic("pitch_shift_down", "pitch_shift", {{"min_semitones", -2.0}, {"max_semitones", -0.5}}, any, seed),
      atomic("resample", "resample", {{"min_speed", 1.0}, {"max_speed", 1.25}}, any, seed),
      atomic("time_stretch", "time_stretch", {{"keep_length", 1}}, any, seed),
      composite("augment1", {{"gain_transition", J::object()}, {"gaussian_noise", J::object()}, {"pitch_shift", J::object()}}, seed),
      composite("augment2", {{"gain", J::object()}, {"time_stretch", {{"keep_length", 1}}}}, seed),
      composite("augment13", {{"pitch_shift", J::object()}, {"gaussian_noise", J::object()}}, seed),
      composite("augment14", {{"loudness_normalize", J::object()}, {"resample", {{"min_speed", 1.0}, {"max_speed", 1.15}}}}, seed),
      composite("augment15", {{"gain_transition", J::object()}, {"time_stretch", {{"keep_length", 1}}}, {"gaussian_noise", J::object()}}, seed),
  };
}

/// The 100 no-fall specs: the fall-safe 14, every no-fall-only transform
/// (most of them twice with different ranges), and 55 seeded random
/// pipelines (augment3-12, augment16-60) of 2-4 transforms.
inline Plan default_nofall_plan(std::uint64_t seed = 2023) {
  using detail::atomic;
  using J = nlohmann::json;
  const Scope nf = Scope::NoFallOnly;
  Plan plan = default_fall_plan(seed);
  const std::vector<AugmentationSpec> only = {
      atomic("time_shift", "time_shift", J::object(), nf, seed),
      atomic("time_shift_small", "time_shift", {{"min_shift_fraction", -0.1}, {"max_shift_fraction", 0.1}}, nf, seed),
      atomic("high_pass", "high_pass", J::object(), nf, seed),
      atomic("high_pass_low", "high_pass", {{"min_cutoff_hz", 20.0}, {"max_cutoff_hz", 400.0}}, nf, seed),
      atomic("low_pass", "low_pass", J::object(), nf, seed),
      atomic("low_pass_high", "low_pass", {{"min_cutoff_hz", 3000.0}, {"max_cutoff_hz", 7500.0}}, nf, seed),
      atomic("band_pass", "band_pass", J::object(), nf, seed),
      atomic("band_pass_wide", "band_pass", {{"min_q", 0.3}, {"max_q", 0.7}}, nf, seed),
      atomic("band_stop", "band_stop", J::object(), nf, seed),
      atomic("band_stop_narrow", "band_stop", {{"min_q", 2.0}, {"max_q", 5.0}}, nf, seed),
      atomic("peaking", "peaking", J::object(), nf, seed),
      atomic("peaking_mild", "peaking", {{"min_gain_db", -9.0}, {"max_gain_db", 9.0}}, nf, seed),
      atomic("high_shelf", "high_shelf", J::object(), nf, seed),
      atomic("high_shelf_mild", "high_shelf", {{"min_gain_db", -6.0}, {"max_gain_db", 6.0}}, nf, seed),
      atomic("low_shelf", "low_shelf", J::object(), nf, seed),
      atomic("low_shelf_mild", "low_shelf", {{"min_gain_db", -6.0}, {"max_gain_db", 6.0}}, nf, seed),
      atomic("gaussian_snr", "gaussian_snr", J::object(), nf, seed),
      atomic("gaussian_snr_high", "gaussian_snr", {{"min_snr_db", 20.0}, {"max_snr_db", 40.0}}, nf, seed),
      atomic("reverse", "reverse", J::object(), nf, seed),
      atomic("clipping_distortion", "clipping_distortion", J::object(), nf, seed),
      atomic("clipping_distortion_mild", "clipping_distortion", {{"min_percentile", 0.0}, {"max_percentile", 10.0}}, nf, seed),
      atomic("polarity_inversion", "polarity_inversion", J::object(), nf, seed),
      atomic("tanh_distortion", "tanh_distortion", J::object(), nf, seed),
      atomic("tanh_distortion_mild", "tanh_distortion", {{"min_distortion", 0.01}, {"max_distortion", 0.2}}, nf, seed),
      atomic("time_mask", "time_mask", J::object(), nf, seed),
      atomic("time_mask_long", "time_mask", {{"min_fraction", 0.1}, {"max_fraction", 0.3}}, nf, seed),
      atomic("normalize", "normalize", J::object(), nf, seed),
      atomic("mp3_compression", "mp3_compression", J::object(), nf, seed),
      atomic("mp3_compression_low", "mp3_compression", {{"min_bits", 3.0}, {"max_bits", 5.0}}, nf, seed),
      atomic("seven_band_eq", "seven_band_eq", J::object(), nf, seed),
      atomic("seven_band_eq_mild", "seven_band_eq", {{"min_gain_db", -6.0}, {"max_gain_db", 6.0}}, nf, seed),
  };
  plan.insert(plan.end(), only.begin(), only.end());

  std::vector<std::string> pool;
  for (const auto& [name, info] : transform_catalog()) pool.push_back(name);
  auto random_pipeline = [&](const std::string& name) {
    Rng rng(derive_seed(seed, "pipeline", name));
    const std::size_t n = 2 + uniform_index(rng, 3);
    std::vector<std::pair<std::string, J>> steps;
    bool has_nofall_only = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string& t = pool[uniform_index(rng, pool.size())];
      J params = J::object();
      if (t == "time_stretch" || t == "resample") params["keep_length"] = 1;
      has_nofall_only = has_nofall_only || transform_catalog().at(t).scope == Scope::NoFallOnly;
      steps.emplace_back(t, params);
    }
    if (!has_nofall_only) steps.emplace_back("time_mask", J::object());
    AugmentationSpec s = detail::composite(name, steps, seed);
    s.scope = Scope::NoFallOnly;
    for (auto& st : s.steps) st.scope = Scope::NoFallOnly;
    return s;
  };
  for (int i = 3; i <= 12; ++i) plan.push_back(random_pipeline("augment" + std::to_string(i)));
  for (int i = 16; i <= 60; ++i) plan.push_back(random_pipeline("augment" + std::to_string(i)));
  return plan;
}

struct ExpandOptions {
  /// Called after each source clip with (done, total).
  std::function<void(std::size_t, std::size_t)> progress;
};

/// Writes every original clip plus its plan variants under
/// `<out_dir>/<category>/<source>[__<tag>].wav` and returns their manifest.
/// Variants inherit their source clip's split.
inline DatasetManifest expand_corpus(const DatasetManifest& manifest, const Plan& fall_plan, const Plan& nofall_plan,
                                     const std::filesystem::path& out_dir, const ExpandOptions& opt = {}) {
  if (fall_plan.empty() || nofall_plan.empty()) throw EmptyPlan("augmentation plans must be non-empty");
  for (const auto* plan : {&fall_plan, &nofall_plan}) {
    std::set<std::string> tags;
    for (const auto& s : *plan) {
      validate_spec(s);
      if (!tags.insert(augment_tag(s)).second) throw DuplicatePath("duplicate plan entry " + augment_tag(s));
    }
  }
  for (const auto& s : fall_plan) {
    if (s.scope != Scope::AnyClass) throw ScopeViolation("fall plan entry '" + s.name + "' is no-fall-only");
  }

  DatasetManifest out;
  out.seed = manifest.seed;
  auto emit = [&](const ManifestEntry& src, const AudioClip& clip, const std::optional<std::string>& tag) {
    const std::string stem = clip.source_id + (tag ? "__" + *tag : "");
    const auto path = out_dir / std::to_string(src.category_id) / (stem + ".wav");
    write_wav(path, clip);
    ManifestEntry e = src;
    e.path = std::filesystem::weakly_canonical(path).string();
    e.augment_tag = tag;
    out.max_len_samples = std::max(out.max_len_samples, clip.original_len);
    out.entries.push_back(std::move(e));
  };

  std::size_t done = 0;
  for (const auto& src : manifest.entries) {
    AudioClip clip = load_clip(src);
    clip.source_id = src.source_id;
    emit(src, clip, std::nullopt);
    const Plan& plan = src.label == Label::Fall ? fall_plan : nofall_plan;
    for (const auto& spec : plan) emit(src, apply(spec, clip), augment_tag(spec));
    if (opt.progress) opt.progress(++done, manifest.entries.size());
  }
  return out;
}

}  // namespace falldet::augment
