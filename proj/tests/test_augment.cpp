#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "falldet/audio/manifest.hpp"
#include "falldet/audio/synth.hpp"
#include "falldet/augment/plan.hpp"
#include "falldet/augment/transforms.hpp"
#include "support.hpp"

using namespace falldet;
using namespace falldet::augment;
using testing_support::make_clip;
using testing_support::noise;

namespace {

AugmentationSpec spec(const std::string& transform, nlohmann::json params = nlohmann::json::object(),
                      std::uint64_t seed = 1) {
  AugmentationSpec s;
  s.name = transform;
  s.transform = transform;
  s.params = std::move(params);
  s.seed = seed;
  s.scope = natural_scope(s);
  return s;
}

double rms(const std::vector<float>& x, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(x[i]) * x[i];
  return std::sqrt(s / static_cast<double>(n));
}

}  // namespace

TEST(Transforms, ZeroGainIsIdentity) {
  const AudioClip c = make_clip(noise(8000, 1));
  const AudioClip out = apply(spec("gain", {{"gain_db", 0.0}}), c);
  EXPECT_EQ(out.samples, c.samples);
  EXPECT_EQ(out.original_len, c.original_len);
}

TEST(Transforms, PolarityInversionIsAnInvolution) {
  const AudioClip c = make_clip(noise(8000, 2));
  const auto s = spec("polarity_inversion");
  const AudioClip once = apply(s, c);
  EXPECT_NE(once.samples, c.samples);
  EXPECT_EQ(apply(s, once).samples, c.samples);
}

TEST(Transforms, GaussianSnrHitsTarget) {
  const AudioClip c = make_clip(testing_support::tone(300, 5.0, kSampleRate, 0.3));
  for (double snr : {5.0, 20.0, 35.0}) {
    const AudioClip out = apply(spec("gaussian_snr", {{"snr_db", snr}}), c);
    std::vector<float> n(c.samples.size());
    for (std::size_t i = 0; i < n.size(); ++i) n[i] = out.samples[i] - c.samples[i];
    const double measured = 20.0 * std::log10(rms(c.samples, c.samples.size()) / rms(n, n.size()));
    EXPECT_NEAR(measured, snr, 0.5);
  }
}

TEST(Transforms, ZeroLengthMaskChangesNothing) {
  const AudioClip c = make_clip(noise(4000, 3));
  EXPECT_EQ(apply(spec("time_mask", {{"fraction", 0.0}}), c).samples, c.samples);
}

TEST(Transforms, OutOfRangeParametersAreRejected) {
  const AudioClip c = make_clip(noise(4000, 3));
  EXPECT_THROW(apply(spec("gaussian_noise", {{"amplitude", -1.0}}), c), ParamOutOfRange);
  EXPECT_THROW(apply(spec("time_mask", {{"fraction", 1.5}}), c), ParamOutOfRange);
  EXPECT_THROW(apply(spec("gain", {{"min_gain_db", 3.0}, {"max_gain_db", -3.0}}), c), ParamOutOfRange);
  AugmentationSpec bad;
  bad.name = bad.transform = "warp_drive";
  EXPECT_THROW(apply(bad, c), UnknownTransform);
}

TEST(Scope, NoFallOnlyTransformsNeverTouchFalls) {
  const AudioClip fall = make_clip(noise(4000, 4), 1);
  std::size_t restricted = 0;
  for (const auto& [name, info] : transform_catalog()) {
    AugmentationSpec s = spec(name);
    if (info.scope == Scope::NoFallOnly) {
      ++restricted;
      EXPECT_THROW(apply(s, fall), ScopeViolation) << name;
      s.scope = Scope::AnyClass;
      EXPECT_THROW(validate_spec(s), ScopeViolation) << name;
    } else {
      EXPECT_NO_THROW(apply(s, fall)) << name;
    }
  }
  EXPECT_GE(restricted, 10u);
}

TEST(Scope, CompositeInheritsTheNarrowestStep) {
  AugmentationSpec c;
  c.name = "mix";
  c.transform = "composite";
  c.steps = {spec("gain"), spec("reverse")};
  EXPECT_EQ(natural_scope(c), Scope::NoFallOnly);
  c.steps.pop_back();
  EXPECT_EQ(natural_scope(c), Scope::AnyClass);
  c.steps.clear();
  EXPECT_THROW(natural_scope(c), EmptyPlan);
}

TEST(Transforms, EveryTransformKeepsLabelAndRange) {
  AudioClip c = make_clip(noise(12000, 5, 0.95), 2);
  c = pad_to_length(c, 16000);
  for (const auto& [name, info] : transform_catalog()) {
    const AudioClip out = apply(spec(name, nlohmann::json::object(), 9), c);
    EXPECT_EQ(out.label, c.label) << name;
    EXPECT_EQ(out.category_id, c.category_id) << name;
    EXPECT_EQ(out.augment_tag, name + "-s9");
    EXPECT_GE(out.samples.size(), c.samples.size()) << name;
    for (float v : out.samples) {
      ASSERT_TRUE(std::isfinite(v)) << name;
      ASSERT_LE(std::abs(v), 1.0f) << name;
    }
  }
}

TEST(Transforms, DeterministicPerSeed) {
  const AudioClip c = make_clip(noise(4000, 6));
  for (const auto& [name, info] : transform_catalog()) {
    EXPECT_EQ(apply(spec(name, {}, 3), c).samples, apply(spec(name, {}, 3), c).samples) << name;
  }
  EXPECT_NE(apply(spec("gaussian_noise", {}, 3), c).samples, apply(spec("gaussian_noise", {}, 4), c).samples);
}

TEST(Plans, DefaultPlansHaveTheExpectedShape) {
  const Plan fall = default_fall_plan(), nofall = default_nofall_plan();
  EXPECT_EQ(fall.size(), 14u);
  EXPECT_EQ(nofall.size(), 100u);
  for (const auto& s : fall) EXPECT_EQ(s.scope, Scope::AnyClass) << s.name;
  std::set<std::string> tags;
  for (const auto& s : nofall) {
    EXPECT_NO_THROW(validate_spec(s));
    tags.insert(augment_tag(s));
  }
  EXPECT_EQ(tags.size(), 100u);
}

TEST(Plans, RoundTripThroughText) {
  const Plan p = default_nofall_plan(7);
  const Plan back = plan_from_string(plan_to_string(p));
  ASSERT_EQ(back.size(), p.size());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(to_json(back[i]), to_json(p[i]));
}

TEST(Expand, OneFallAndOneNoFallGive116Clips) {
  testing_support::TempDir dir("expand");
  std::vector<std::pair<std::filesystem::path, int>> files;
  for (int cat : {3, 4}) {
    AudioClip c = synth_clip(cat, 0, 16000, 5);
    const auto p = dir / ("src/" + std::to_string(cat) + "/" + c.source_id + ".wav");
    std::filesystem::create_directories(p.parent_path());
    write_wav(p, c);
    files.emplace_back(p, cat);
  }
  BuildOptions o;
  o.require_all_categories = false;
  const DatasetManifest m = build_manifest_from_files(files, 1, o);
  const DatasetManifest out = expand_corpus(m, default_fall_plan(), default_nofall_plan(), dir / "out");
  EXPECT_EQ(out.entries.size(), 116u);
  EXPECT_EQ(out.count(Label::Fall), 15u);
  EXPECT_EQ(out.count(Label::NoFall), 101u);
  std::set<std::string> paths;
  for (const auto& e : out.entries) {
    paths.insert(e.path);
    EXPECT_TRUE(std::filesystem::exists(e.path));
  }
  EXPECT_EQ(paths.size(), 116u);
  EXPECT_LE(out.max_len_samples, 16000u);
}

TEST(Expand, EmptyPlanIsRejected) {
  DatasetManifest m;
  testing_support::TempDir dir("empty_plan");
  EXPECT_THROW(expand_corpus(m, {}, default_nofall_plan(), dir.path()), EmptyPlan);
  EXPECT_THROW(expand_corpus(m, default_fall_plan(), {}, dir.path()), EmptyPlan);
}

TEST(Expand, NoFallOnlySpecInFallPlanIsRejected) {
  DatasetManifest m;
  testing_support::TempDir dir("bad_plan");
  Plan fall = default_fall_plan();
  fall.push_back(spec("reverse"));
  EXPECT_THROW(expand_corpus(m, fall, default_nofall_plan(), dir.path()), ScopeViolation);
}
