#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

#include "falldet/audio/clip.hpp"
#include "falldet/error.hpp"

namespace falldet::nn {

/// Index 0 weights Fall, index 1 NoFall.
using ClassWeights = std::array<double, 2>;

/// -w[label] * log(max(p[label], 1e-12)).
inline double weighted_loss(const std::array<double, 2>& probs, Label label, const ClassWeights& w) {
  const auto i = static_cast<std::size_t>(label);
  return -w[i] * std::log(std::max(probs[i], 1e-12));
}

/// Inverse class frequency, scaled so the majority class has weight 1.
inline ClassWeights inverse_frequency_weights(std::size_t n_fall, std::size_t n_nofall) {
  if (n_fall == 0 || n_nofall == 0) throw EmptySplit("class weights need both classes present");
  const double f = static_cast<double>(n_fall), n = static_cast<double>(n_nofall);
  const double majority = std::max(f, n);
  return {majority / f, majority / n};
}

}  // namespace falldet::nn
