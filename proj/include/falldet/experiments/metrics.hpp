#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "falldet/audio/clip.hpp"
#include "falldet/error.hpp"

namespace falldet::exp {

/// Fall is the positive class. Ratios with a zero denominator are 0.
struct Confusion {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  void add(Label truth, Label predicted) {
    if (truth == Label::Fall) {
      (predicted == Label::Fall ? tp : fn)++;
    } else {
      (predicted == Label::Fall ? fp : tn)++;
    }
  }

  std::size_t total() const { return tp + tn + fp + fn; }
  double accuracy() const { return ratio(tp + tn, total()); }
  double precision() const { return ratio(tp, tp + fp); }
  double recall() const { return ratio(tp, tp + fn); }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }

  static double ratio(std::size_t num, std::size_t den) {
    return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
  }
};

inline Confusion confusion(std::span<const Label> truth, std::span<const Label> predicted) {
  if (truth.size() != predicted.size()) throw ShapeMismatch("truth and prediction counts differ");
  Confusion c;
  for (std::size_t i = 0; i < truth.size(); ++i) c.add(truth[i], predicted[i]);
  return c;
}

struct ThresholdPoint {
  double threshold = 0.5;
  double precision = 0, recall = 0, f1 = 0, accuracy = 0;
};

/// Precision/recall of "p_fall >= threshold" at each threshold.
inline std::vector<ThresholdPoint> threshold_sweep(std::span<const double> p_fall, std::span<const Label> truth,
                                                   std::span<const double> thresholds) {
  std::vector<ThresholdPoint> out;
  for (double t : thresholds) {
    Confusion c;
    for (std::size_t i = 0; i < truth.size(); ++i) c.add(truth[i], p_fall[i] >= t ? Label::Fall : Label::NoFall);
    out.push_back({t, c.precision(), c.recall(), c.f1(), c.accuracy()});
  }
  return out;
}

inline std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 1; i < 100; ++i) t.push_back(i / 100.0);
  return t;
}

using PairKey = std::pair<int, int>;  // (fall category, no-fall category)

struct PairStats {
  double recall = 0, precision = 0, accuracy = 0;
  std::size_t n_fall = 0, n_nofall = 0;
};

struct EvalReport {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  std::map<PairKey, double> per_pair_recall;
  std::vector<ThresholdPoint> sweep;

  static EvalReport from(const Confusion& c) {
    EvalReport r;
    r.tp = c.tp;
    r.tn = c.tn;
    r.fp = c.fp;
    r.fn = c.fn;
    r.accuracy = c.accuracy();
    r.precision = c.precision();
    r.recall = c.recall();
    r.f1 = c.f1();
    return r;
  }

  std::size_t total() const { return tp + tn + fp + fn; }
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = {{"tp", r.tp},         {"tn", r.tn},     {"fp", r.fp}, {"fn", r.fn},
                      {"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}};
  if (!r.per_pair_recall.empty()) {
    auto& pairs = j["per_pair_recall"] = nlohmann::json::array();
    for (const auto& [k, v] : r.per_pair_recall) pairs.push_back({{"fall", k.first}, {"nofall", k.second}, {"recall", v}});
  }
  if (!r.sweep.empty()) {
    auto& s = j["threshold_sweep"] = nlohmann::json::array();
    for (const auto& p : r.sweep)
      s.push_back({{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1},
                   {"accuracy", p.accuracy}});
  }
  return j;
}

}  // namespace falldet::exp
