#pragma once

// Mini-batch training loop shared by the Transformer and the dense baseline.
//
// A model type M must provide
//   using scalar = T;
//   ParameterSet<T>& params();
//   Var forward_logits(Tape<T>&, const std::vector<const FeatureMatrix*>&,
//                      const ForwardOptions&, Rng*, AttentionProbe<T>*);
//   std::array<double, 2> predict(const FeatureMatrix&);

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "falldet/error.hpp"
#include "falldet/nn/adam.hpp"
#include "falldet/nn/autodiff.hpp"
#include "falldet/nn/loss.hpp"
#include "falldet/nn/model.hpp"
#include "falldet/nn/source.hpp"
#include "falldet/random.hpp"

namespace falldet::nn {

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0, train_accuracy = 0;
  double val_loss = 0, val_accuracy = 0;
  bool has_val = false;
};

struct TrainOptions {
  std::size_t batch_size = 20;
  int epochs = 10;
  double lr = 1e-5;
  std::uint64_t seed = 0;
  /// Defaults to inverse class frequency of the training source.
  std::optional<ClassWeights> class_weights;
  bool trim_padding = true;
  /// Restore the parameters of the epoch with the best validation accuracy.
  bool keep_best_val = true;
  /// Line-delimited JSON epoch records go here when set.
  std::ostream* log = nullptr;
  std::function<void(int epoch, std::size_t batch, std::size_t n_batches)> on_batch;
  /// Return false to stop after this epoch.
  std::function<bool(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  int best_epoch = -1;
  double best_val_accuracy = 0;
  ClassWeights class_weights{1.0, 1.0};
};

/// Argmax with ties going to Fall.
inline Label decide(const std::array<double, 2>& probs) {
  return probs[kFallIndex] >= probs[1 - kFallIndex] ? Label::Fall : Label::NoFall;
}

struct SourceScore {
  double loss = 0;
  double accuracy = 0;
};

template <class M>
SourceScore score_source(M& model, const ExampleSource& src, const ClassWeights& w) {
  SourceScore s;
  if (src.size() == 0) return s;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto probs = model.predict(*src.features(i));
    s.loss += weighted_loss(probs, src.label(i), w);
    correct += decide(probs) == src.label(i);
  }
  s.loss /= static_cast<double>(src.size());
  s.accuracy = static_cast<double>(correct) / static_cast<double>(src.size());
  return s;
}

/// Mean weighted loss and gradients for one batch; returns the loss and
/// fills `predicted` with argmax labels.
template <class M>
double batch_gradient(M& model, const std::vector<const FeatureMatrix*>& xs, const std::vector<Label>& labels,
                      const ClassWeights& w, const ForwardOptions& opt, Rng* rng,
                      std::vector<Label>* predicted = nullptr) {
  using T = typename M::scalar;
  Tape<T> tape(true);
  const Var logits = model.forward_logits(tape, xs, opt, rng, nullptr);
  std::vector<int> y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) y[i] = static_cast<int>(labels[i]);
  const Var loss = ops::weighted_cross_entropy(tape, logits, y, {static_cast<T>(w[0]), static_cast<T>(w[1])});
  if (predicted) {
    const auto& L = tape.value(logits);
    predicted->clear();
    for (Eigen::Index r = 0; r < L.rows(); ++r)
      predicted->push_back(L(r, kFallIndex) >= L(r, 1 - kFallIndex) ? Label::Fall : Label::NoFall);
  }
  tape.backward(loss);
  return static_cast<double>(tape.value(loss)(0, 0));
}

template <class M>
TrainResult train(M& model, const ExampleSource& train_src, const ExampleSource* val_src, const TrainOptions& opt) {
  using T = typename M::scalar;
  TrainResult result;
  if (opt.epochs <= 0) return result;
  if (train_src.size() == 0) throw EmptySplit("training split is empty");
  if (val_src && val_src->size() == 0) throw EmptySplit("validation split is empty");
  if (opt.batch_size == 0) throw InvalidConfig("batch size must be positive");

  result.class_weights = opt.class_weights
                             ? *opt.class_weights
                             : inverse_frequency_weights(train_src.count(Label::Fall), train_src.count(Label::NoFall));
  const ClassWeights w = result.class_weights;

  auto& params = model.params();
  Adam<T> adam(params, AdamOptions{.lr = opt.lr});
  Rng dropout_rng(derive_seed(opt.seed, "dropout"));
  ForwardOptions fopt{Mode::Train, opt.trim_padding};
  std::optional<ParameterSet<T>> best;

  std::vector<std::size_t> order(train_src.size());
  std::vector<const FeatureMatrix*> xs;
  std::vector<std::shared_ptr<const FeatureMatrix>> hold;
  std::vector<Label> ys, predicted;
  const std::size_t n_batches = (order.size() + opt.batch_size - 1) / opt.batch_size;

  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(opt.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle(order, shuffle_rng);

    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      xs.clear();
      hold.clear();
      ys.clear();
      const std::size_t lo = b * opt.batch_size, hi = std::min(order.size(), lo + opt.batch_size);
      for (std::size_t i = lo; i < hi; ++i) {
        hold.push_back(train_src.features(order[i]));
        xs.push_back(hold.back().get());
        ys.push_back(train_src.label(order[i]));
      }
      params.zero_grad();
      double loss = 0;
      try {
        loss = batch_gradient(model, xs, ys, w, fopt, &dropout_rng, &predicted);
      } catch (const NonFiniteActivation& e) {
        throw DivergedTraining(std::string("epoch ") + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(loss)) throw DivergedTraining("non-finite loss at epoch " + std::to_string(epoch));
      for (const auto& p : params)
        if (!p.grad.allFinite())
          throw DivergedTraining("non-finite gradient for " + p.name + " at epoch " + std::to_string(epoch));
      adam.step(params);
      loss_sum += loss * static_cast<double>(hi - lo);
      for (std::size_t i = 0; i < ys.size(); ++i) correct += predicted[i] == ys[i];
      if (opt.on_batch) opt.on_batch(epoch, b + 1, n_batches);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    if (val_src) {
      const SourceScore s = score_source(model, *val_src, w);
      m.has_val = true;
      m.val_loss = s.loss;
      m.val_accuracy = s.accuracy;
      if (result.best_epoch < 0 || m.val_accuracy > result.best_val_accuracy) {
        result.best_epoch = epoch;
        result.best_val_accuracy = m.val_accuracy;
        if (opt.keep_best_val) best = params;
      }
    }
    if (opt.log) {
      *opt.log << nlohmann::json{{"epoch", epoch}, {"split", "train"}, {"loss", m.train_loss},
                                 {"accuracy", m.train_accuracy}}.dump()
               << '\n';
      if (m.has_val) {
        *opt.log << nlohmann::json{{"epoch", epoch}, {"split", "val"}, {"loss", m.val_loss},
                                   {"accuracy", m.val_accuracy}}.dump()
                 << '\n';
      }
      opt.log->flush();
    }
    result.epochs.push_back(m);
    if (opt.on_epoch && !opt.on_epoch(m)) break;
  }
  if (best) params.assign_values(*best);
  return result;
}

}  // namespace falldet::nn
