#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "falldet/audio/clip.hpp"
#include "falldet/audio/wav.hpp"
#include "falldet/error.hpp"
#include "falldet/random.hpp"

namespace falldet {

enum class Split { Train, Val, Test };

inline std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw MalformedManifest("unknown split '" + std::string(text) + "'");
}

struct ManifestEntry {
  std::string path;
  int category_id = 0;
  Label label = Label::NoFall;
  Split split = Split::Train;
  std::string source_id;
  std::optional<std::string> augment_tag;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  static constexpr int kVersion = 1;

  std::vector<ManifestEntry> entries;
  std::size_t max_len_samples = 0;
  std::uint64_t seed = 0;

  std::vector<const ManifestEntry*> select(Split split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == split) out.push_back(&e);
    return out;
  }

  std::size_t count(Split split, Label label) const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const auto& e) {
      return e.split == split && e.label == label;
    }));
  }

  std::size_t count(Label label) const {
    return static_cast<std::size_t>(std::count_if(
        entries.begin(), entries.end(), [&](const auto& e) { return e.label == label; }));
  }
};

/// Per-category 80:10:10 split sizes: test = ceil(n/10), val = floor(n/10),
/// train = the rest.
struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
};

inline SplitSizes split_sizes(std::size_t n) {
  SplitSizes s;
  s.test = (n + 9) / 10;
  s.val = n / 10;
  s.train = n - s.test - s.val;
  return s;
}

struct BuildOptions {
  /// Keep every augmentation lineage (same source_id) inside one split.
  /// The split is then over lineages, so per-clip ratios are approximate.
  bool group_by_source = false;
  /// Require all eight taxonomy categories to have at least one clip.
  bool require_all_categories = true;
};

/// Source clip name and augmentation tag encoded in a corpus file stem:
/// `<source>` for originals, `<source>__<tag>` for augmented variants.
inline std::pair<std::string, std::optional<std::string>> parse_stem(const std::string& stem) {
  const auto sep = stem.find("__");
  if (sep == std::string::npos) return {stem, std::nullopt};
  return {stem.substr(0, sep), stem.substr(sep + 2)};
}

/// Assigns splits to already-labelled entries. Pure function of the sorted
/// entry list and the seed.
inline void assign_splits(std::vector<ManifestEntry>& entries, std::uint64_t seed,
                          const BuildOptions& options = {}) {
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.path < b.path; });
  std::map<int, std::vector<std::size_t>> by_category;
  for (std::size_t i = 0; i < entries.size(); ++i) by_category[entries[i].category_id].push_back(i);

  for (auto& [category, indices] : by_category) {
    Rng rng(derive_seed(seed, "split", category));
    if (!options.group_by_source) {
      shuffle(indices, rng);
      const SplitSizes sizes = split_sizes(indices.size());
      for (std::size_t k = 0; k < indices.size(); ++k) {
        entries[indices[k]].split =
            k < sizes.test ? Split::Test : (k < sizes.test + sizes.val ? Split::Val : Split::Train);
      }
      continue;
    }
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i : indices) groups[entries[i].source_id].push_back(i);
    std::vector<std::string> keys;
    for (const auto& [key, members] : groups) keys.push_back(key);
    shuffle(keys, rng);
    const SplitSizes sizes = split_sizes(keys.size());
    for (std::size_t k = 0; k < keys.size(); ++k) {
      const Split split =
          k < sizes.test ? Split::Test : (k < sizes.test + sizes.val ? Split::Val : Split::Train);
      for (std::size_t i : groups[keys[k]]) entries[i].split = split;
    }
  }
}

/// Builds a manifest from explicit files (path, category). Paths are
/// canonicalized; the same file listed twice raises DuplicatePath.
inline DatasetManifest build_manifest_from_files(
    const std::vector<std::pair<std::filesystem::path, int>>& files, std::uint64_t seed,
    const BuildOptions& options = {}) {
  DatasetManifest manifest;
  manifest.seed = seed;
  std::set<std::string> seen;
  std::map<int, std::size_t> per_category;
  for (const auto& [file, category] : files) {
    ManifestEntry e;
    e.path = std::filesystem::weakly_canonical(file).string();
    if (!seen.insert(e.path).second) throw DuplicatePath(e.path);
    e.category_id = category;
    e.label = label_for_category(category);
    std::tie(e.source_id, e.augment_tag) = parse_stem(file.stem().string());
    manifest.max_len_samples = std::max(manifest.max_len_samples, probe_wav_length(file));
    ++per_category[category];
    manifest.entries.push_back(std::move(e));
  }
  if (manifest.entries.empty()) throw EmptyCategory("corpus contains no clips");
  if (options.require_all_categories) {
    for (int c : kCategories) {
      if (per_category[c] == 0) throw EmptyCategory("category " + std::to_string(c) + " has no clips");
    }
  }
  assign_splits(manifest.entries, seed, options);
  return manifest;
}

/// Scans `corpus_dir/<category_id>/*.wav` and splits per category.
inline DatasetManifest build_manifest(const std::filesystem::path& corpus_dir, std::uint64_t seed,
                                      const BuildOptions& options = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(corpus_dir)) throw IoError("not a directory: " + corpus_dir.string());
  std::vector<std::pair<fs::path, int>> files;
  for (const auto& dir : fs::directory_iterator(corpus_dir)) {
    if (!dir.is_directory()) continue;
    int category = 0;
    try {
      std::size_t used = 0;
      category = std::stoi(dir.path().filename().string(), &used);
      if (used != dir.path().filename().string().size()) continue;
    } catch (const std::exception&) {
      continue;
    }
    if (!is_valid_category(category)) continue;
    for (const auto& f : fs::directory_iterator(dir.path())) {
      if (f.is_regular_file() && f.path().extension() == ".wav") files.emplace_back(f.path(), category);
    }
  }
  std::sort(files.begin(), files.end());
  return build_manifest_from_files(files, seed, options);
}

inline std::string manifest_to_string(const DatasetManifest& manifest) {
  std::ostringstream out;
  nlohmann::json header = {{"type", "header"},
                           {"version", DatasetManifest::kVersion},
                           {"seed", manifest.seed},
                           {"max_len_samples", manifest.max_len_samples}};
  out << header.dump() << '\n';
  for (const auto& e : manifest.entries) {
    nlohmann::json j = {{"path", e.path},
                        {"category_id", e.category_id},
                        {"label", to_string(e.label)},
                        {"split", to_string(e.split)},
                        {"source_id", e.source_id},
                        {"augment_tag", e.augment_tag ? nlohmann::json(*e.augment_tag) : nlohmann::json()}};
    out << j.dump() << '\n';
  }
  return out.str();
}

inline DatasetManifest manifest_from_string(const std::string& text) {
  DatasetManifest manifest;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw MalformedManifest("line " + std::to_string(line_no) + ": " + ex.what());
    }
    try {
      if (!have_header) {
        if (j.value("type", "") != "header") throw MalformedManifest("first record must be the header");
        if (j.at("version").get<int>() != DatasetManifest::kVersion) {
          throw MalformedManifest("unsupported manifest version");
        }
        manifest.seed = j.at("seed").get<std::uint64_t>();
        manifest.max_len_samples = j.at("max_len_samples").get<std::size_t>();
        have_header = true;
        continue;
      }
      ManifestEntry e;
      e.path = j.at("path").get<std::string>();
      e.category_id = j.at("category_id").get<int>();
      e.label = parse_label(j.at("label").get<std::string>());
      if (e.label != label_for_category(e.category_id)) {
        throw MalformedManifest("label does not match category " + std::to_string(e.category_id));
      }
      e.split = parse_split(j.at("split").get<std::string>());
      e.source_id = j.value("source_id", std::filesystem::path(e.path).stem().string());
      if (j.contains("augment_tag") && !j["augment_tag"].is_null()) {
        e.augment_tag = j["augment_tag"].get<std::string>();
      }
      manifest.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw MalformedManifest("line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  if (!have_header) throw MalformedManifest("missing header record");
  return manifest;
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  const std::string text = manifest_to_string(manifest);
  detail::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return manifest_from_string(std::string(bytes.begin(), bytes.end()));
}

/// Decodes a manifest entry, restoring its category, label and lineage.
inline AudioClip load_clip(const ManifestEntry& entry) {
  AudioClip clip = decode_wav(entry.path);
  clip.category_id = entry.category_id;
  clip.label = entry.label;
  clip.source_id = entry.source_id;
  clip.augment_tag = entry.augment_tag;
  return clip;
}

}  // namespace falldet
