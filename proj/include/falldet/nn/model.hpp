#pragma once

// Transformer encoder classifier.
//
// Sequences of a batch are packed row-wise into one matrix so every dense
// layer is a single GEMM; attention runs per sequence. Each sequence is
// [CLS; frames], projected (optionally), offset by a sinusoidal position
// table, passed through the encoder stack, and classified from row 0.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "falldet/error.hpp"
#include "falldet/features/feature_matrix.hpp"
#include "falldet/nn/autodiff.hpp"
#include "falldet/nn/config.hpp"
#include "falldet/nn/tensor.hpp"
#include "falldet/random.hpp"

namespace falldet::nn {

enum class Mode { Train, Eval };

/// Index 0 is Fall, index 1 NoFall (matches falldet::Label).
inline constexpr int kFallIndex = 0;

/// pe(pos, 2i) = sin(pos / 10000^(2i/d)), pe(pos, 2i+1) = cos(same angle).
template <class T>
Mat<T> sinusoidal_positions(int n, int d) {
  Mat<T> pe(n, d);
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
      pe(pos, i) = static_cast<T>(std::sin(angle));
      if (i + 1 < d) pe(pos, i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

/// Xavier/Glorot uniform in [-a, a], a = sqrt(6 / (fan_in + fan_out)).
template <class T>
Mat<T> xavier_uniform(int fan_in, int fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  Mat<T> w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(uniform(rng, -a, a));
  return w;
}

struct ForwardOptions {
  Mode mode = Mode::Eval;
  /// Drop trailing masked frames before the encoder. Masked keys receive
  /// zero attention either way, so the CLS output is unchanged; only the
  /// work shrinks.
  bool trim_padding = true;
};

template <class T>
class TransformerClassifier {
 public:
  using scalar = T;

  explicit TransformerClassifier(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build(seed);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  /// Records the forward pass of a batch on `tape` and returns the B x 2
  /// logits node. `rng` feeds dropout in Train mode.
  Var forward_logits(Tape<T>& tape, const std::vector<const FeatureMatrix*>& batch, const ForwardOptions& opt,
                     Rng* rng = nullptr, AttentionProbe<T>* probe = nullptr) {
    if (batch.empty()) throw ShapeMismatch("empty batch");
    const bool train = opt.mode == Mode::Train && cfg_.dropout > 0.0;
    if (train && !rng) throw InvalidConfig("train mode needs an rng for dropout");

    // Pack frames; masked rows are zeroed so their contents never matter.
    std::vector<std::size_t> counts;
    std::size_t total_frames = 0;
    for (const FeatureMatrix* x : batch) {
      if (static_cast<int>(x->cols) != cfg_.input_dim) {
        throw ShapeMismatch("feature width " + std::to_string(x->cols) + " != input_dim " +
                            std::to_string(cfg_.input_dim));
      }
      if (static_cast<int>(x->rows) > cfg_.max_frames) {
        throw ShapeMismatch("feature rows " + std::to_string(x->rows) + " > max_frames " +
                            std::to_string(cfg_.max_frames));
      }
      std::size_t keep = x->rows;
      if (opt.trim_padding)
        while (keep > 0 && !x->valid(keep - 1)) --keep;
      counts.push_back(keep);
      total_frames += keep;
    }
    Mat<T> frames = Mat<T>::Zero(static_cast<Eigen::Index>(total_frames), cfg_.input_dim);
    std::vector<Segment> segments;
    std::vector<std::uint8_t> key_valid;
    std::vector<std::size_t> cls_rows;
    key_valid.reserve(total_frames + batch.size());
    Eigen::Index fr = 0;
    std::size_t offset = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const FeatureMatrix& x = *batch[b];
      segments.push_back({offset, counts[b] + 1});
      cls_rows.push_back(offset);
      key_valid.push_back(1);
      for (std::size_t r = 0; r < counts[b]; ++r, ++fr) {
        key_valid.push_back(x.valid(r) ? 1 : 0);
        if (!x.valid(r)) continue;
        const float* src = x.data.data() + r * x.cols;
        for (int c = 0; c < cfg_.input_dim; ++c) frames(fr, c) = static_cast<T>(src[c]);
        if (cfg_.input_scale != 1.0) frames.row(fr) *= static_cast<T>(cfg_.input_scale);
      }
      offset += counts[b] + 1;
    }

    Var h = ops::prepend_token(tape, p(tape, cls_), frames, counts);
    if (cfg_.use_projection) h = ops::linear(tape, h, p(tape, proj_w_), p(tape, proj_b_));

    Mat<T> pe(static_cast<Eigen::Index>(offset), cfg_.d_model);
    for (const Segment& s : segments) {
      pe.middleRows(static_cast<Eigen::Index>(s.offset), static_cast<Eigen::Index>(s.length)) =
          positions_.topRows(static_cast<Eigen::Index>(s.length));
    }
    h = ops::add_constant(tape, h, pe);

    for (const Layer& L : layers_) {
      if (cfg_.norm_first) {
        Var a = ops::layer_norm(tape, h, p(tape, L.ln1_g), p(tape, L.ln1_b));
        a = attention_block(tape, L, a, segments, key_valid, probe);
        if (train) a = ops::dropout(tape, a, cfg_.dropout, *rng);
        h = ops::add(tape, h, a);
        Var f = ops::layer_norm(tape, h, p(tape, L.ln2_g), p(tape, L.ln2_b));
        f = feed_forward(tape, L, f);
        if (train) f = ops::dropout(tape, f, cfg_.dropout, *rng);
        h = ops::add(tape, h, f);
      } else {
        Var a = attention_block(tape, L, h, segments, key_valid, probe);
        if (train) a = ops::dropout(tape, a, cfg_.dropout, *rng);
        h = ops::layer_norm(tape, ops::add(tape, h, a), p(tape, L.ln1_g), p(tape, L.ln1_b));
        Var f = feed_forward(tape, L, h);
        if (train) f = ops::dropout(tape, f, cfg_.dropout, *rng);
        h = ops::layer_norm(tape, ops::add(tape, h, f), p(tape, L.ln2_g), p(tape, L.ln2_b));
      }
    }

    Var z = ops::gather_rows(tape, h, cls_rows);
    if (cfg_.norm_first) z = ops::layer_norm(tape, z, p(tape, final_g_), p(tape, final_b_));
    for (const auto& [w, b] : mlp_) z = ops::relu(tape, ops::linear(tape, z, p(tape, w), p(tape, b)));
    Var logits = ops::linear(tape, z, p(tape, out_w_), p(tape, out_b_));
    if (!tape.value(logits).allFinite()) throw NonFiniteActivation("non-finite logits");
    return logits;
  }

  /// Eval-mode class probabilities {p_fall, p_nofall} for one input.
  std::array<double, 2> predict(const FeatureMatrix& x, AttentionProbe<T>* probe = nullptr,
                                bool trim_padding = true) {
    Tape<T> tape(false);
    ForwardOptions opt;
    opt.trim_padding = trim_padding;
    Var logits = forward_logits(tape, {&x}, opt, nullptr, probe);
    const Mat<T> prob = ops::softmax_rows<T>(tape.value(logits));
    return {static_cast<double>(prob(0, 0)), static_cast<double>(prob(0, 1))};
  }

  std::size_t parameter_count() const { return params_.scalar_count(); }

 private:
  struct Layer {
    std::size_t ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
  };

  Var p(Tape<T>& tape, std::size_t i) { return tape.parameter(params_[i]); }

  Var attention_block(Tape<T>& tape, const Layer& L, Var x, const std::vector<Segment>& segments,
                      const std::vector<std::uint8_t>& key_valid, AttentionProbe<T>* probe) {
    Var qkv = ops::linear(tape, x, p(tape, L.wqkv), p(tape, L.bqkv));
    Var o = ops::attention(tape, qkv, segments, key_valid, cfg_.n_heads, cfg_.head_dim(), probe);
    return ops::linear(tape, o, p(tape, L.wo), p(tape, L.bo));
  }

  Var feed_forward(Tape<T>& tape, const Layer& L, Var x) {
    Var f = ops::relu(tape, ops::linear(tape, x, p(tape, L.ff1_w), p(tape, L.ff1_b)));
    return ops::linear(tape, f, p(tape, L.ff2_w), p(tape, L.ff2_b));
  }

  std::size_t dense(const std::string& name, int in, int out, std::uint64_t seed, std::size_t* bias) {
    Rng rng(derive_seed(seed, "init", name));
    const std::size_t w = params_.add(name + ".w", xavier_uniform<T>(in, out, rng));
    *bias = params_.add(name + ".b", Mat<T>::Zero(1, out));
    return w;
  }

  /// Q, K and V maps stored side by side; each third is initialized as its
  /// own d x a Xavier matrix.
  std::size_t qkv_dense(const std::string& name, int in, int a, std::uint64_t seed, std::size_t* bias) {
    Mat<T> w(in, 3 * a);
    for (int part = 0; part < 3; ++part) {
      Rng rng(derive_seed(seed, "init", name, part));
      w.middleCols(part * a, a) = xavier_uniform<T>(in, a, rng);
    }
    const std::size_t idx = params_.add(name + ".w", std::move(w));
    *bias = params_.add(name + ".b", Mat<T>::Zero(1, 3 * a));
    return idx;
  }

  std::pair<std::size_t, std::size_t> norm(const std::string& name) {
    const int d = cfg_.d_model;
    return {params_.add(name + ".g", Mat<T>::Ones(1, d)), params_.add(name + ".b", Mat<T>::Zero(1, d))};
  }

  void build(std::uint64_t seed) {
    const int d = cfg_.d_model, a = cfg_.attn_width();
    cls_ = params_.add("cls", Mat<T>::Ones(1, cfg_.token_dim()));
    if (cfg_.use_projection) proj_w_ = dense("proj", cfg_.input_dim, d, seed, &proj_b_);
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      Layer L{};
      std::tie(L.ln1_g, L.ln1_b) = norm(pre + "ln1");
      L.wqkv = qkv_dense(pre + "attn.qkv", d, a, seed, &L.bqkv);
      L.wo = dense(pre + "attn.o", a, d, seed, &L.bo);
      std::tie(L.ln2_g, L.ln2_b) = norm(pre + "ln2");
      L.ff1_w = dense(pre + "ff1", d, cfg_.ff_dim, seed, &L.ff1_b);
      L.ff2_w = dense(pre + "ff2", cfg_.ff_dim, d, seed, &L.ff2_b);
      layers_.push_back(L);
    }
    if (cfg_.norm_first) std::tie(final_g_, final_b_) = norm("final_ln");
    int prev = d;
    for (std::size_t i = 0; i < cfg_.mlp_head.size(); ++i) {
      std::size_t b = 0;
      const std::size_t w = dense("mlp" + std::to_string(i), prev, cfg_.mlp_head[i], seed, &b);
      mlp_.emplace_back(w, b);
      prev = cfg_.mlp_head[i];
    }
    out_w_ = dense("out", prev, cfg_.n_classes, seed, &out_b_);
    positions_ = sinusoidal_positions<T>(cfg_.max_frames + 1, d);
  }

  ModelConfig cfg_;
  ParameterSet<T> params_;
  std::size_t cls_ = 0, proj_w_ = 0, proj_b_ = 0, final_g_ = 0, final_b_ = 0, out_w_ = 0, out_b_ = 0;
  std::vector<Layer> layers_;
  std::vector<std::pair<std::size_t, std::size_t>> mlp_;
  Mat<T> positions_;
};

}  // namespace falldet::nn
