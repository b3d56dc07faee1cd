#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "falldet/nn/tensor.hpp"

namespace falldet::nn {

struct AdamOptions {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. State is laid out parallel to a ParameterSet.
template <class T>
class Adam {
 public:
  Adam(const ParameterSet<T>& params, AdamOptions opt = {}) : opt_(opt) {
    for (const auto& p : params) {
      m_.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void step(ParameterSet<T>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T step = static_cast<T>(opt_.lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(opt_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      m_[i] = b1 * m_[i] + (T(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (T(1) - b2) * p.grad.cwiseAbs2();
      p.value.array() -= step * m_[i].array() / ((v_[i].array() * inv_c2).sqrt() + eps);
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  AdamOptions opt_;
  std::vector<Mat<T>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace falldet::nn
