#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "falldet/error.hpp"

namespace falldet::nn {

struct ModelConfig {
  std::string config_id = "B";
  int input_dim = 1600;
  int d_model = 512;
  int n_layers = 12;
  int n_heads = 12;
  int ff_dim = 1024;
  double dropout = 0.1;
  std::vector<int> mlp_head = {265, 64, 10};
  int n_classes = 2;
  bool use_projection = true;
  int max_frames = 87;
  bool norm_first = true;
  /// Multiplies every input feature before the CLS row is prepended. Set
  /// from training data so frames are not dwarfed by the all-ones CLS row.
  double input_scale = 1.0;

  /// Per-head width. When d_model is not a multiple of n_heads the heads are
  /// rounded up, so the concatenated head width may exceed d_model.
  int head_dim() const { return (d_model + n_heads - 1) / n_heads; }
  int attn_width() const { return head_dim() * n_heads; }

  /// Width of the CLS row: it is prepended before the projection.
  int token_dim() const { return input_dim; }

  void validate() const {
    if (input_dim <= 0 || d_model <= 0 || n_layers < 0 || n_heads <= 0 || ff_dim <= 0 || max_frames <= 0) {
      throw InvalidConfig("model dimensions must be positive");
    }
    if (n_classes != 2) throw InvalidConfig("classifier must have 2 outputs");
    if (!use_projection && input_dim != d_model) {
      throw InvalidConfig("without projection input_dim must equal d_model (" + std::to_string(input_dim) +
                          " vs " + std::to_string(d_model) + ")");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw InvalidConfig("dropout must be in [0, 1)");
    if (!(input_scale > 0.0) || !std::isfinite(input_scale)) throw InvalidConfig("input_scale must be positive");
    for (int w : mlp_head)
      if (w <= 0) throw InvalidConfig("mlp widths must be positive");
  }
};

/// Segmented raw audio.
inline ModelConfig config_a(int input_dim = 1600, int max_frames = 87) {
  ModelConfig c;
  c.config_id = "A";
  c.input_dim = input_dim;
  c.max_frames = max_frames;
  return c;
}

/// Diff features.
inline ModelConfig config_b(int input_dim = 1600, int max_frames = 86) {
  ModelConfig c = config_a(input_dim, max_frames);
  c.config_id = "B";
  return c;
}

/// Log mel spectrograms: no projection, no MLP head.
inline ModelConfig config_c(int n_mels = 64, int max_frames = 88) {
  ModelConfig c;
  c.config_id = "C";
  c.input_dim = n_mels;
  c.d_model = n_mels;
  c.n_heads = 6;
  c.ff_dim = 2 * n_mels;
  c.mlp_head.clear();
  c.use_projection = false;
  c.max_frames = max_frames;
  return c;
}

inline ModelConfig config_by_id(const std::string& id, int input_dim, int max_frames) {
  if (id == "A") return config_a(input_dim, max_frames);
  if (id == "B") return config_b(input_dim, max_frames);
  if (id == "C") return config_c(input_dim, max_frames);
  throw InvalidConfig("unknown config id " + id);
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"config_id", c.config_id}, {"input_dim", c.input_dim},   {"d_model", c.d_model},
          {"n_layers", c.n_layers},   {"n_heads", c.n_heads},       {"ff_dim", c.ff_dim},
          {"dropout", c.dropout},     {"mlp_head", c.mlp_head},     {"n_classes", c.n_classes},
          {"use_projection", c.use_projection}, {"max_frames", c.max_frames}, {"norm_first", c.norm_first},
          {"input_scale", c.input_scale}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.config_id = j.at("config_id").get<std::string>();
    c.input_dim = j.at("input_dim").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.ff_dim = j.at("ff_dim").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.mlp_head = j.at("mlp_head").get<std::vector<int>>();
    c.n_classes = j.at("n_classes").get<int>();
    c.use_projection = j.at("use_projection").get<bool>();
    c.max_frames = j.at("max_frames").get<int>();
    c.norm_first = j.value("norm_first", true);
    c.input_scale = j.value("input_scale", 1.0);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("model config: ") + e.what());
  }
}

/// Closed-form learnable scalar count.
inline std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, a = c.attn_width(), f = c.ff_dim, in = c.input_dim;
  std::size_t n = in;  // CLS row
  if (c.use_projection) n += in * d + d;
  const std::size_t per_layer = 3 * (d * a + a) + (a * d + d) + (d * f + f) + (f * d + d) + 4 * d;
  n += static_cast<std::size_t>(c.n_layers) * per_layer;
  if (c.norm_first) n += 2 * d;
  std::size_t prev = d;
  for (int w : c.mlp_head) {
    n += prev * w + w;
    prev = w;
  }
  n += prev * c.n_classes + c.n_classes;
  return n;
}

}  // namespace falldet::nn
