#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <set>
#include <vector>

#include "falldet/audio/clip.hpp"
#include "falldet/error.hpp"
#include "falldet/experiments/metrics.hpp"
#include "falldet/nn/source.hpp"
#include "falldet/nn/train.hpp"

namespace falldet::exp {

struct Prediction {
  double p_fall = 0;
  Label truth = Label::NoFall;
  Label predicted = Label::NoFall;
  int category = 0;
};

/// Eval-mode prediction for every example of `src`, in source order.
template <class M>
std::vector<Prediction> predict_all(M& model, const nn::ExampleSource& src) {
  std::vector<Prediction> out;
  out.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto probs = model.predict(*src.features(i));
    out.push_back({probs[nn::kFallIndex], src.label(i), nn::decide(probs), src.category(i)});
  }
  return out;
}

inline EvalReport report_from(const std::vector<Prediction>& preds, bool with_sweep = true) {
  Confusion c;
  std::vector<double> p;
  std::vector<Label> y;
  for (const auto& pr : preds) {
    c.add(pr.truth, pr.predicted);
    p.push_back(pr.p_fall);
    y.push_back(pr.truth);
  }
  EvalReport r = EvalReport::from(c);
  if (with_sweep) r.sweep = threshold_sweep(p, y, default_thresholds());
  return r;
}

template <class M>
EvalReport evaluate(M& model, const nn::ExampleSource& src) {
  if (src.size() == 0) throw EmptySplit("nothing to evaluate");
  return report_from(predict_all(model, src));
}

/// For each (fall category, no-fall category) pair, statistics over the
/// clips of exactly those two categories.
inline std::map<PairKey, PairStats> pairwise_from(const std::vector<Prediction>& preds) {
  std::set<int> present;
  for (const auto& p : preds) present.insert(p.category);
  for (int cat : kCategories) {
    if (!present.count(cat)) throw MissingCategory("category " + std::to_string(cat) + " missing from split");
  }
  std::map<PairKey, PairStats> out;
  for (int f : kFallCategories) {
    for (int n : kNoFallCategories) {
      Confusion c;
      PairStats s;
      for (const auto& p : preds) {
        if (p.category != f && p.category != n) continue;
        c.add(p.truth, p.predicted);
        (p.category == f ? s.n_fall : s.n_nofall)++;
      }
      s.recall = c.recall();
      s.precision = c.precision();
      s.accuracy = c.accuracy();
      out[{f, n}] = s;
    }
  }
  return out;
}

template <class M>
std::map<PairKey, PairStats> pairwise_analysis(M& model, const nn::ExampleSource& test_src) {
  return pairwise_from(predict_all(model, test_src));
}

inline std::map<PairKey, double> pair_recalls(const std::map<PairKey, PairStats>& stats) {
  std::map<PairKey, double> out;
  for (const auto& [k, v] : stats) out[k] = v.recall;
  return out;
}

}  // namespace falldet::exp
