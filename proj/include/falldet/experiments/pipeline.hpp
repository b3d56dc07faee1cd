#pragma once

// Glue shared by the command-line tool and the acceptance runner: train a
// Transformer or a baseline on the splits of a manifest and evaluate it.

#include <functional>
#include <memory>
#include <string>

#include "falldet/experiments/ablation.hpp"
#include "falldet/experiments/baselines.hpp"
#include "falldet/experiments/evaluate.hpp"
#include "falldet/nn/checkpoint.hpp"
#include "falldet/nn/model.hpp"
#include "falldet/nn/train.hpp"

namespace falldet::exp {

struct TrainedTransformer {
  nn::TransformerClassifier<float> model;
  nn::TrainResult result;
  FeatureSpec features;
  std::size_t target_len = 0;

  void save(const std::filesystem::path& path) const { nn::save_checkpoint(path, model, features, target_len); }
};

inline TrainedTransformer train_transformer(const SplitSources& s, const std::string& config_id,
                                            const FeatureSpec& features, const nn::TrainOptions& opt,
                                            const std::function<void(nn::ModelConfig&)>& adjust = {}) {
  if (s.train->size() == 0) throw EmptySplit("training split is empty");
  const auto x0 = s.train->features(0);
  nn::ModelConfig cfg =
      nn::config_by_id(config_id, static_cast<int>(x0->cols), static_cast<int>(x0->rows));
  cfg.input_scale = nn::unit_rms_scale(*s.train);
  if (adjust) adjust(cfg);
  TrainedTransformer t{nn::TransformerClassifier<float>(cfg, opt.seed), {}, features, s.target_len};
  t.result = nn::train(t.model, *s.train, s.val.get(), opt);
  return t;
}

inline EvalReport baseline_dnn(const SplitSources& s, const nn::TrainOptions& opt) {
  if (s.train->size() == 0) throw EmptySplit("training split is empty");
  const auto x0 = s.train->features(0);
  DenseClassifier<float> dnn(x0->rows, x0->cols, {256, 64}, 0.1, opt.seed);
  nn::train(dnn, *s.train, s.val.get(), opt);
  return evaluate(dnn, *s.test);
}

struct SvmReport {
  EvalReport report;
  bool converged = false;
  std::size_t support_vectors = 0;
};

inline SvmReport baseline_svm(const SplitSources& s, const SvmOptions& opt) {
  if (s.train->size() == 0) throw EmptySplit("training split is empty");
  const auto x0 = s.train->features(0);
  SvmFit fit;
  {
    auto [X, y] = design_matrix(*s.train, x0->rows, x0->cols);
    fit = train_svm(X, y, opt);
  }
  SvmReport r;
  r.converged = fit.model.converged;
  r.support_vectors = static_cast<std::size_t>(fit.model.support.rows());
  SvmClassifier clf(std::move(fit.model), x0->rows, x0->cols);
  r.report = evaluate(clf, *s.test);
  return r;
}

}  // namespace falldet::exp
