#pragma once

// Ablation grids: one train + evaluate per cell, one shared seed, results
// as a delimited table plus per-epoch curves for plotting.

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "falldet/audio/manifest.hpp"
#include "falldet/error.hpp"
#include "falldet/experiments/evaluate.hpp"
#include "falldet/features/features.hpp"
#include "falldet/nn/config.hpp"
#include "falldet/nn/model.hpp"
#include "falldet/nn/source.hpp"
#include "falldet/nn/train.hpp"

namespace falldet::exp {

enum class AblationAxis { HeadsLayers, Mels, Hop, TSeg, Combined };

inline std::string_view to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::HeadsLayers: return "heads-layers";
    case AblationAxis::Mels: return "mels";
    case AblationAxis::Hop: return "hop";
    case AblationAxis::TSeg: return "tseg";
    case AblationAxis::Combined: return "combined";
  }
  return "?";
}

inline AblationAxis parse_axis(std::string_view s) {
  for (auto a : {AblationAxis::HeadsLayers, AblationAxis::Mels, AblationAxis::Hop, AblationAxis::TSeg,
                 AblationAxis::Combined})
    if (to_string(a) == s) return a;
  throw InvalidConfig("unknown ablation axis '" + std::string(s) + "'");
}

struct AblationCell {
  std::string setting;
  FeatureSpec features;
  std::string config_id;  // A, B or C
  int n_heads = 0;        // 0 keeps the configuration default
  int n_layers = 0;
};

/// Model configuration family for a feature kind.
inline std::string default_config_for(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::SegmentedRaw: return "A";
    case FeatureKind::Diff: return "B";
    case FeatureKind::LogMel: return "C";
    case FeatureKind::Combined: return "B";
  }
  return "B";
}

/// Cells of one grid axis. `kind` picks the feature family for the
/// heads-layers axis (the other axes fix it).
inline std::vector<AblationCell> ablation_cells(AblationAxis axis, FeatureKind kind = FeatureKind::Diff) {
  std::vector<AblationCell> cells;
  auto heads_layers = [&](FeatureKind k) {
    FeatureSpec f;
    f.kind = k;
    for (int heads : {1, 3, 6, 12}) {
      for (int layers : {3, 6, 12}) {
        cells.push_back({"heads=" + std::to_string(heads) + ";layers=" + std::to_string(layers), f,
                         default_config_for(k), heads, layers});
      }
    }
  };
  switch (axis) {
    case AblationAxis::HeadsLayers:
      heads_layers(kind);
      break;
    case AblationAxis::Combined:
      heads_layers(FeatureKind::Combined);
      break;
    case AblationAxis::Mels:
      for (int m : {32, 64, 128}) {
        FeatureSpec f;
        f.kind = FeatureKind::LogMel;
        f.n_mels = m;
        cells.push_back({"mels=" + std::to_string(m), f, "C"});
      }
      break;
    case AblationAxis::Hop:
      for (int h : {1600, 1000, 500}) {
        FeatureSpec f;
        f.kind = FeatureKind::LogMel;
        f.hop = h;
        cells.push_back({"hop=" + std::to_string(h), f, "C"});
      }
      break;
    case AblationAxis::TSeg:
      for (int t : {50, 100, 300, 500}) {
        FeatureSpec f;
        f.kind = FeatureKind::Diff;
        f.t_seg_ms = t;
        cells.push_back({"tseg=" + std::to_string(t), f, "B"});
      }
      break;
  }
  return cells;
}

/// Model configuration of a cell for inputs of the given shape.
inline nn::ModelConfig cell_config(const AblationCell& cell, const FeatureShape& shape) {
  nn::ModelConfig cfg = nn::config_by_id(cell.config_id, static_cast<int>(shape.cols), static_cast<int>(shape.rows));
  if (cell.n_heads > 0) cfg.n_heads = cell.n_heads;
  if (cell.n_layers > 0) cfg.n_layers = cell.n_layers;
  return cfg;
}

struct SplitSources {
  std::shared_ptr<nn::ExampleSource> train, val, test;
  std::size_t target_len = 0;
};

using SourceFactory = std::function<SplitSources(const FeatureSpec&)>;

inline SourceFactory manifest_sources(const DatasetManifest& manifest, std::size_t target_len = 0,
                                      bool cache = false) {
  const std::size_t len = target_len ? target_len : manifest.max_len_samples;
  return [manifest, len, cache](const FeatureSpec& spec) {
    SplitSources s;
    s.train = std::make_shared<nn::ManifestSource>(manifest, Split::Train, spec, len, cache);
    s.val = std::make_shared<nn::ManifestSource>(manifest, Split::Val, spec, len, cache);
    s.test = std::make_shared<nn::ManifestSource>(manifest, Split::Test, spec, len, cache);
    s.target_len = len;
    return s;
  };
}

struct AblationOptions {
  nn::TrainOptions train;
  /// Run only the cell with this setting string.
  std::optional<std::string> only_cell;
  /// Applied to every cell's configuration before the model is built.
  std::function<void(nn::ModelConfig&)> adjust;
  std::ostream* progress = nullptr;
};

struct AblationRow {
  std::string axis, setting, features, shape;
  double accuracy = 0, f1 = 0, precision = 0, recall = 0;
  double seconds = 0;
  std::string error;  // empty when the cell finished
};

struct CurvePoint {
  std::string setting;
  nn::EpochMetrics metrics;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<CurvePoint> curves;
};

inline std::string shape_of(const nn::ExampleSource& src) {
  if (src.size() == 0) return "0x0";
  return src.features(0)->shape_string();
}

inline AblationTable run_ablation(AblationAxis axis, const std::vector<AblationCell>& cells,
                                  const SourceFactory& sources, const AblationOptions& opt) {
  AblationTable table;
  for (const AblationCell& cell : cells) {
    if (opt.only_cell && *opt.only_cell != cell.setting) continue;
    AblationRow row;
    row.axis = to_string(axis);
    row.setting = cell.setting;
    row.features = to_string(cell.features.kind);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const SplitSources s = sources(cell.features);
      if (s.train->size() == 0) throw EmptySplit("training split is empty");
      const auto x0 = s.train->features(0);
      row.shape = x0->shape_string();
      nn::ModelConfig cfg = cell_config(cell, {x0->rows, x0->cols});
      cfg.input_scale = nn::unit_rms_scale(*s.train);
      if (opt.adjust) opt.adjust(cfg);
      nn::TransformerClassifier<float> model(cfg, opt.train.seed);
      if (opt.progress) *opt.progress << "[" << row.axis << "] " << cell.setting << " " << row.shape << std::endl;
      const nn::TrainResult res = nn::train(model, *s.train, s.val.get(), opt.train);
      for (const auto& m : res.epochs) table.curves.push_back({cell.setting, m});
      const EvalReport r = report_from(predict_all(model, *s.test), false);
      row.accuracy = r.accuracy;
      row.f1 = r.f1;
      row.precision = r.precision;
      row.recall = r.recall;
    } catch (const std::exception& e) {
      row.error = e.what();
      if (opt.progress) *opt.progress << "  failed: " << e.what() << std::endl;
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline std::string table_csv(const AblationTable& t) {
  std::ostringstream out;
  out << "axis,setting,features,shape,accuracy,f1,precision,recall,seconds,error\n";
  for (const auto& r : t.rows) {
    std::string err = r.error;
    for (char& c : err)
      if (c == ',' || c == '\n') c = ';';
    out << r.axis << ',' << r.setting << ',' << r.features << ',' << r.shape << ',' << r.accuracy << ',' << r.f1 << ','
        << r.precision << ',' << r.recall << ',' << r.seconds << ',' << err << '\n';
  }
  return out.str();
}

inline std::string curves_csv(const AblationTable& t) {
  std::ostringstream out;
  out << "setting,epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (const auto& c : t.curves) {
    const auto& m = c.metrics;
    out << c.setting << ',' << m.epoch << ',' << m.train_loss << ',' << m.train_accuracy << ',' << m.val_loss << ','
        << m.val_accuracy << '\n';
  }
  return out.str();
}

}  // namespace falldet::exp
