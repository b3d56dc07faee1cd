#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "falldet/audio/clip.hpp"
#include "falldet/audio/manifest.hpp"
#include "falldet/audio/resample.hpp"
#include "falldet/audio/synth.hpp"
#include "falldet/audio/wav.hpp"
#include "support.hpp"

using namespace falldet;
using testing_support::TempDir;

namespace {

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::size_t peak_bin(const std::vector<double>& p) {
  return static_cast<std::size_t>(std::max_element(p.begin() + 1, p.end()) - p.begin());
}

}  // namespace

TEST(Wav, SilenceDecodesToZeros) {
  TempDir dir("wav");
  write_bytes(dir / "s.wav", encode_wav(std::vector<float>(16000, 0.0f), 16000));
  const AudioClip c = decode_wav(dir / "s.wav");
  ASSERT_EQ(c.samples.size(), 16000u);
  EXPECT_TRUE(std::all_of(c.samples.begin(), c.samples.end(), [](float v) { return v == 0.0f; }));
  EXPECT_EQ(c.sample_rate_hz, 16000);
  EXPECT_EQ(c.original_len, 16000u);
}

TEST(Wav, EightKilohertzDoublesSampleCount) {
  TempDir dir("wav");
  write_bytes(dir / "a.wav", encode_wav(testing_support::tone(300, 1.0, 8000), 8000));
  EXPECT_EQ(decode_wav(dir / "a.wav").samples.size(), 16000u);
}

TEST(Wav, ResampledToneKeepsItsFrequency) {
  TempDir dir("wav");
  write_bytes(dir / "t.wav", encode_wav(testing_support::tone(440, 1.0, 44100), 44100));
  const AudioClip c = decode_wav(dir / "t.wav");
  ASSERT_EQ(c.samples.size(), 16000u);
  // 4000-sample excerpt: 4 Hz bins, 440 Hz sits on bin 110.
  std::vector<double> seg(c.samples.begin() + 6000, c.samples.begin() + 10000);
  const auto p = testing_support::naive_power_spectrum(seg);
  const double bin_hz = 16000.0 / seg.size();
  EXPECT_NEAR(static_cast<double>(peak_bin(p)) * bin_hz, 440.0, bin_hz);
}

TEST(Wav, RoundTripWithinOneLsb) {
  TempDir dir("wav");
  const auto x = testing_support::noise(5000, 7, 0.9);
  for (int bits : {8, 16, 24}) {
    const auto path = dir / ("r" + std::to_string(bits) + ".wav");
    write_bytes(path, encode_wav(x, 16000, bits));
    const AudioClip c = decode_wav(path);
    ASSERT_EQ(c.samples.size(), x.size());
    const double lsb = std::ldexp(1.0, -(bits - 1));
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_LE(std::abs(c.samples[i] - x[i]), lsb) << bits << " bit";
  }
}

TEST(Wav, StereoIsChannelMean) {
  TempDir dir("wav");
  auto bytes = encode_wav(std::vector<float>(4, 0.0f), 16000, 16, 2);
  // Left = 0.5, right = -0.25 for every frame.
  for (std::size_t f = 0; f < 4; ++f) {
    const std::int16_t l = 16384, r = -8192;
    std::memcpy(bytes.data() + 44 + 4 * f, &l, 2);
    std::memcpy(bytes.data() + 44 + 4 * f + 2, &r, 2);
  }
  write_bytes(dir / "st.wav", bytes);
  const AudioClip c = decode_wav(dir / "st.wav");
  ASSERT_EQ(c.samples.size(), 4u);
  for (float v : c.samples) EXPECT_FLOAT_EQ(v, 0.125f);
}

TEST(Wav, TruncatedDataIsMalformed) {
  TempDir dir("wav");
  auto bytes = encode_wav(std::vector<float>(1000, 0.1f), 16000);
  bytes.resize(bytes.size() - 100);
  write_bytes(dir / "t.wav", bytes);
  EXPECT_THROW(decode_wav(dir / "t.wav"), MalformedWav);
  write_bytes(dir / "g.wav", {'n', 'o', 'p', 'e'});
  EXPECT_THROW(decode_wav(dir / "g.wav"), MalformedWav);
}

TEST(Wav, FloatEncodingIsUnsupported) {
  TempDir dir("wav");
  auto bytes = encode_wav(std::vector<float>(10, 0.0f), 16000);
  bytes[20] = 3;  // IEEE float format code
  write_bytes(dir / "f.wav", bytes);
  EXPECT_THROW(decode_wav(dir / "f.wav"), UnsupportedEncoding);
}

TEST(Resample, IdentityAtSameRate) {
  const auto x = testing_support::noise(321, 3);
  EXPECT_EQ(resample(x, 16000, 16000), x);
}

TEST(Pad, OneSecondClipGetsZeroTail) {
  const AudioClip c = pad_to_length(testing_support::make_clip(testing_support::noise(16000, 1)), 139760);
  ASSERT_EQ(c.samples.size(), 139760u);
  EXPECT_EQ(c.original_len, 16000u);
  EXPECT_EQ(std::count(c.samples.begin() + 16000, c.samples.end(), 0.0f), 123760);
}

TEST(Pad, IdentityAtTargetAndTooLongThrows) {
  const AudioClip a = testing_support::make_clip(testing_support::noise(100, 2));
  EXPECT_EQ(pad_to_length(a, 100).samples, a.samples);
  EXPECT_THROW(pad_to_length(a, 99), ClipTooLong);
}

TEST(Pad, CorpusMaximumIs139760Samples) {
  EXPECT_EQ(seconds_to_samples(8.735), 139760u);
}

TEST(Labels, FollowTheTaxonomy) {
  for (int c : {1, 3, 6, 8, 9}) EXPECT_EQ(label_for_category(c), Label::Fall);
  for (int c : {2, 4, 5}) EXPECT_EQ(label_for_category(c), Label::NoFall);
  EXPECT_THROW(label_for_category(7), MalformedManifest);
}

TEST(Split, TenClipsGiveEightOneOne) {
  const SplitSizes s = split_sizes(10);
  EXPECT_EQ(s.train, 8u);
  EXPECT_EQ(s.val, 1u);
  EXPECT_EQ(s.test, 1u);
}

TEST(Split, ExpandedCorpusMatchesPublishedCounts) {
  // 12/12/11/11/12/11/12/11 originals, x15 for falls and x101 otherwise.
  const std::map<int, std::size_t> n = {{1, 180}, {2, 1212}, {3, 165}, {4, 1111},
                                        {5, 1212}, {6, 165}, {8, 180}, {9, 165}};
  std::size_t tr[2] = {}, va[2] = {}, te[2] = {};
  for (const auto& [cat, count] : n) {
    const int k = label_for_category(cat) == Label::Fall ? 0 : 1;
    const SplitSizes s = split_sizes(count);
    EXPECT_EQ(s.train + s.val + s.test, count);
    tr[k] += s.train;
    va[k] += s.val;
    te[k] += s.test;
  }
  EXPECT_EQ(tr[0], 684u);
  EXPECT_EQ(va[0], 84u);
  EXPECT_EQ(te[0], 87u);
  EXPECT_EQ(tr[1], 2826u);
  EXPECT_EQ(va[1], 353u);
  EXPECT_EQ(te[1], 356u);
}

class SmallCorpus : public ::testing::Test {
 protected:
  void SetUp() override {
    SynthSpec spec;
    spec.seed = 11;
    spec.max_len_samples = 48000;
    spec.min_duration_s = 1.0;
    for (int c : kCategories) spec.counts[c] = 10;
    synth_corpus(spec, dir_.path());
  }
  TempDir dir_{"corpus"};
};

TEST_F(SmallCorpus, ManifestIsStratifiedAndDeterministic) {
  const DatasetManifest a = build_manifest(dir_.path(), 5);
  const DatasetManifest b = build_manifest(dir_.path(), 5);
  EXPECT_EQ(manifest_to_string(a), manifest_to_string(b));
  EXPECT_EQ(a.entries.size(), 80u);
  EXPECT_EQ(a.max_len_samples, 48000u);
  std::map<int, std::map<Split, int>> per;
  for (const auto& e : a.entries) per[e.category_id][e.split]++;
  for (int c : kCategories) {
    EXPECT_EQ(per[c][Split::Train], 8);
    EXPECT_EQ(per[c][Split::Val], 1);
    EXPECT_EQ(per[c][Split::Test], 1);
  }
  EXPECT_NE(manifest_to_string(build_manifest(dir_.path(), 6)), manifest_to_string(a));
}

TEST_F(SmallCorpus, EntriesRoundTripAndLabelsMatchFiles) {
  const DatasetManifest m = build_manifest(dir_.path(), 5);
  const DatasetManifest back = manifest_from_string(manifest_to_string(m));
  EXPECT_EQ(back.entries, m.entries);
  EXPECT_EQ(back.seed, m.seed);
  EXPECT_EQ(back.max_len_samples, m.max_len_samples);
  std::size_t falls = 0;
  for (const auto& e : m.entries) {
    const AudioClip c = load_clip(e);
    const int dir_category = std::stoi(std::filesystem::path(e.path).parent_path().filename().string());
    EXPECT_EQ(dir_category, e.category_id);
    EXPECT_EQ(c.label, label_for_category(dir_category));
    falls += e.label == Label::Fall;
  }
  EXPECT_EQ(falls, 50u);
  EXPECT_EQ(m.count(Label::Fall), 50u);
}

TEST_F(SmallCorpus, GroupedSplitKeepsLineagesTogether) {
  // Pretend every clip has a sibling variant.
  std::vector<std::pair<std::filesystem::path, int>> files;
  for (int c : kCategories) {
    for (const auto& f : std::filesystem::directory_iterator(dir_.path() / std::to_string(c))) {
      const auto copy = f.path().parent_path() / (f.path().stem().string() + "__gain-s1.wav");
      std::filesystem::copy_file(f.path(), copy);
      files.emplace_back(f.path(), c);
      files.emplace_back(copy, c);
    }
  }
  BuildOptions o;
  o.group_by_source = true;
  const DatasetManifest m = build_manifest_from_files(files, 3, o);
  std::map<std::string, std::set<Split>> splits;
  for (const auto& e : m.entries) splits[e.source_id].insert(e.split);
  for (const auto& [src, s] : splits) EXPECT_EQ(s.size(), 1u) << src;
}

TEST(Manifest, DuplicateAndEmptyInputsAreRejected) {
  TempDir dir("dup");
  SynthSpec spec;
  spec.seed = 1;
  spec.max_len_samples = 32000;
  for (int c : kCategories) spec.counts[c] = 1;
  const auto files = synth_corpus(spec, dir.path());
  std::vector<std::pair<std::filesystem::path, int>> list;
  for (const auto& f : files) list.emplace_back(f, std::stoi(f.parent_path().filename().string()));
  list.push_back(list.front());
  EXPECT_THROW(build_manifest_from_files(list, 1), DuplicatePath);

  TempDir empty("empty");
  EXPECT_THROW(build_manifest(empty.path(), 1), EmptyCategory);
  std::filesystem::remove_all(dir.path() / "5");
  EXPECT_THROW(build_manifest(dir.path(), 1), EmptyCategory);
}

TEST(Manifest, HeaderIsRequired) {
  EXPECT_THROW(manifest_from_string("{\"path\":\"x\"}\n"), MalformedManifest);
}

TEST(Synth, TableCountsGiveFiftySevenFallsAndThirtyFiveNoFalls) {
  TempDir dir("synth");
  const auto files = synth_corpus(default_synth_spec(), dir.path());
  std::size_t fall = 0, nofall = 0;
  std::size_t longest = 0;
  for (const auto& f : files) {
    (label_for_category(std::stoi(f.parent_path().filename().string())) == Label::Fall ? fall : nofall)++;
    const AudioClip c = decode_wav(f);
    longest = std::max(longest, c.samples.size());
    EXPECT_GE(c.samples.size(), 32000u);
    EXPECT_LE(c.samples.size(), 139760u);
  }
  EXPECT_EQ(fall, 57u);
  EXPECT_EQ(nofall, 35u);
  EXPECT_EQ(files.size(), 92u);
  EXPECT_EQ(longest, 139760u);
}

TEST(Synth, ZeroCountsGiveEmptyCorpus) {
  TempDir dir("zero");
  SynthSpec spec;
  for (int c : kCategories) spec.counts[c] = 0;
  EXPECT_TRUE(synth_corpus(spec, dir.path()).empty());
  EXPECT_THROW(build_manifest(dir.path(), 1), EmptyCategory);
}

TEST(Synth, DeterministicPerSeed) {
  const AudioClip a = synth_clip(3, 4, 20000, 9), b = synth_clip(3, 4, 20000, 9), c = synth_clip(3, 4, 20000, 10);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, c.samples);
}

TEST(Synth, WaterHasLowSpectralCentroid) {
  const AudioClip c = synth_clip(5, 0, 16000, 2023);
  std::vector<double> seg(c.samples.begin(), c.samples.begin() + 4096);
  const auto p = testing_support::naive_power_spectrum(seg);
  double num = 0, den = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    num += p[k] * k * 16000.0 / seg.size();
    den += p[k];
  }
  EXPECT_LT(num / den, 2000.0);
}
