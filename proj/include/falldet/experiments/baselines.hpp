#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "falldet/error.hpp"
#include "falldet/features/feature_matrix.hpp"
#include "falldet/nn/autodiff.hpp"
#include "falldet/nn/model.hpp"
#include "falldet/nn/source.hpp"
#include "falldet/random.hpp"

namespace falldet::exp {

/// Row-major flattening of a fixed frames x dims grid; masked and missing
/// frames are zero.
inline void flatten_into(const FeatureMatrix& x, std::size_t frames, std::size_t dims, float* out) {
  if (x.cols != dims || x.rows > frames) throw ShapeMismatch("feature shape exceeds flattening grid");
  std::fill(out, out + frames * dims, 0.0f);
  for (std::size_t r = 0; r < x.rows; ++r)
    if (x.valid(r)) std::copy_n(x.data.data() + r * dims, dims, out + r * dims);
}

/// Dense baseline: flatten -> 256 -> 64 -> 2 with ReLU and dropout.
template <class T>
class DenseClassifier {
 public:
  using scalar = T;

  DenseClassifier(std::size_t frames, std::size_t dims, std::vector<int> hidden = {256, 64}, double dropout = 0.1,
                  std::uint64_t seed = 0)
      : frames_(frames), dims_(dims), dropout_(dropout) {
    int prev = static_cast<int>(frames * dims);
    for (std::size_t i = 0; i <= hidden.size(); ++i) {
      const int out = i < hidden.size() ? hidden[i] : 2;
      const std::string name = "dense" + std::to_string(i);
      Rng rng(derive_seed(seed, "init", name));
      layers_.push_back({params_.add(name + ".w", nn::xavier_uniform<T>(prev, out, rng)),
                         params_.add(name + ".b", nn::Mat<T>::Zero(1, out))});
      prev = out;
    }
  }

  nn::ParameterSet<T>& params() { return params_; }

  nn::Var forward_logits(nn::Tape<T>& tape, const std::vector<const FeatureMatrix*>& batch,
                         const nn::ForwardOptions& opt, Rng* rng, nn::AttentionProbe<T>* = nullptr) {
    const bool train = opt.mode == nn::Mode::Train && dropout_ > 0.0;
    std::vector<float> flat(frames_ * dims_);
    nn::Mat<T> X(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(frames_ * dims_));
    for (std::size_t b = 0; b < batch.size(); ++b) {
      flatten_into(*batch[b], frames_, dims_, flat.data());
      for (std::size_t k = 0; k < flat.size(); ++k) X(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k)) = flat[k];
    }
    nn::Var h = tape.constant(std::move(X));
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = nn::ops::linear(tape, h, tape.parameter(params_[layers_[i].first]), tape.parameter(params_[layers_[i].second]));
      if (i + 1 < layers_.size()) {
        h = nn::ops::relu(tape, h);
        if (train) h = nn::ops::dropout(tape, h, dropout_, *rng);
      }
    }
    if (!tape.value(h).allFinite()) throw NonFiniteActivation("non-finite logits");
    return h;
  }

  std::array<double, 2> predict(const FeatureMatrix& x) {
    nn::Tape<T> tape(false);
    const nn::Var logits = forward_logits(tape, {&x}, {}, nullptr);
    const nn::Mat<T> p = nn::ops::softmax_rows<T>(tape.value(logits));
    return {static_cast<double>(p(0, 0)), static_cast<double>(p(0, 1))};
  }

 private:
  std::size_t frames_, dims_;
  double dropout_;
  nn::ParameterSet<T> params_;
  std::vector<std::pair<std::size_t, std::size_t>> layers_;
};

// ---------------------------------------------------------------------------
// Soft-margin SVM trained by sequential minimal optimization.

enum class Kernel { Linear, Rbf };

struct SvmOptions {
  Kernel kernel = Kernel::Linear;
  double c = 1.0;
  /// 0 selects 1 / num_features.
  double gamma = 0.0;
  double tolerance = 1e-4;
  std::size_t max_iterations = 0;  // 0 selects max(10^7, 100 n)
};

struct SvmModel {
  Kernel kernel = Kernel::Linear;
  double gamma = 0;
  double bias = 0;
  Eigen::MatrixXf support;        // one support vector per row
  Eigen::VectorXd coef;           // alpha_i * y_i
  Eigen::VectorXd support_sqnorm;
  bool converged = false;
  std::size_t iterations = 0;

  double kernel_value(double dot, double sq_a, double sq_b) const {
    return kernel == Kernel::Linear ? dot : std::exp(-gamma * std::max(0.0, sq_a + sq_b - 2.0 * dot));
  }

  double decision(const Eigen::VectorXf& x) const {
    if (support.rows() == 0) return bias;
    const Eigen::VectorXd dots = (support * x).cast<double>();
    const double sq = x.cast<double>().squaredNorm();
    double f = bias;
    for (Eigen::Index i = 0; i < dots.size(); ++i) f += coef(i) * kernel_value(dots(i), support_sqnorm(i), sq);
    return f;
  }
};

struct SvmFit {
  SvmModel model;
  Eigen::VectorXd alpha;
  Eigen::VectorXd train_decision;
};

/// y[i] = +1 for Fall, -1 otherwise. Rows of X are samples.
inline SvmFit train_svm(const Eigen::MatrixXf& X, const std::vector<int>& y, const SvmOptions& opt) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (n == 0 || X.rows() != n) throw ShapeMismatch("svm: one label per row required");
  const double C = opt.c;
  const double gamma = opt.gamma > 0.0 ? opt.gamma : 1.0 / static_cast<double>(X.cols());

  Eigen::MatrixXf dots_f(n, n);
  dots_f.noalias() = X * X.transpose();
  const Eigen::MatrixXd dots = dots_f.cast<double>();
  dots_f.resize(0, 0);
  const Eigen::VectorXd sq = dots.diagonal();
  SvmModel proto;
  proto.kernel = opt.kernel;
  proto.gamma = gamma;
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) K(i, j) = proto.kernel_value(dots(i, j), sq(i), sq(j));

  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd G = Eigen::VectorXd::Constant(n, -1.0);
  auto yy = [&](Eigen::Index i) { return static_cast<double>(y[static_cast<std::size_t>(i)]); };
  auto in_up = [&](Eigen::Index t) { return (yy(t) > 0 && alpha(t) < C) || (yy(t) < 0 && alpha(t) > 0); };
  auto in_low = [&](Eigen::Index t) { return (yy(t) > 0 && alpha(t) > 0) || (yy(t) < 0 && alpha(t) < C); };
  constexpr double tau = 1e-12;
  const std::size_t max_iter = opt.max_iterations ? opt.max_iterations : std::max<std::size_t>(10'000'000, 100 * n);

  std::size_t iter = 0;
  bool converged = false;
  for (; iter < max_iter; ++iter) {
    // Working-set selection with second-order information.
    Eigen::Index i = -1;
    double gmax = -INFINITY;
    for (Eigen::Index t = 0; t < n; ++t)
      if (in_up(t) && -yy(t) * G(t) >= gmax) {
        gmax = -yy(t) * G(t);
        i = t;
      }
    Eigen::Index j = -1;
    double gmin = INFINITY, best = INFINITY;
    for (Eigen::Index t = 0; t < n; ++t) {
      if (!in_low(t)) continue;
      const double v = -yy(t) * G(t);
      gmin = std::min(gmin, v);
      if (i < 0) continue;
      const double b = gmax - v;
      if (b > 0) {
        double a = K(i, i) + K(t, t) - 2.0 * K(i, t);
        if (a <= 0) a = tau;
        if (-(b * b) / a <= best) {
          best = -(b * b) / a;
          j = t;
        }
      }
    }
    if (i < 0 || j < 0 || gmax - gmin < opt.tolerance) {
      converged = true;
      break;
    }

    const double yi = yy(i), yj = yy(j);
    const double Qij = yi * yj * K(i, j);
    const double ai_old = alpha(i), aj_old = alpha(j);
    if (yi != yj) {
      double quad = K(i, i) + K(j, j) + 2.0 * Qij;
      if (quad <= 0) quad = tau;
      const double delta = (-G(i) - G(j)) / quad;
      const double diff = alpha(i) - alpha(j);
      alpha(i) += delta;
      alpha(j) += delta;
      if (diff > 0 && alpha(j) < 0) {
        alpha(j) = 0;
        alpha(i) = diff;
      } else if (diff <= 0 && alpha(i) < 0) {
        alpha(i) = 0;
        alpha(j) = -diff;
      }
      if (diff > 0 && alpha(i) > C) {
        alpha(i) = C;
        alpha(j) = C - diff;
      } else if (diff <= 0 && alpha(j) > C) {
        alpha(j) = C;
        alpha(i) = C + diff;
      }
    } else {
      double quad = K(i, i) + K(j, j) - 2.0 * Qij;
      if (quad <= 0) quad = tau;
      const double delta = (G(i) - G(j)) / quad;
      const double sum = alpha(i) + alpha(j);
      alpha(i) -= delta;
      alpha(j) += delta;
      if (sum > C && alpha(i) > C) {
        alpha(i) = C;
        alpha(j) = sum - C;
      } else if (sum <= C && alpha(j) < 0) {
        alpha(j) = 0;
        alpha(i) = sum;
      }
      if (sum > C && alpha(j) > C) {
        alpha(j) = C;
        alpha(i) = sum - C;
      } else if (sum <= C && alpha(i) < 0) {
        alpha(i) = 0;
        alpha(j) = sum;
      }
    }
    const double di = alpha(i) - ai_old, dj = alpha(j) - aj_old;
    for (Eigen::Index t = 0; t < n; ++t) G(t) += yy(t) * (yi * K(t, i) * di + yj * K(t, j) * dj);
  }

  // Offset from free vectors, or the midpoint of the feasible interval.
  double ub = INFINITY, lb = -INFINITY, sum_free = 0;
  std::size_t n_free = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yg = yy(t) * G(t);
    if (alpha(t) > 0 && alpha(t) < C) {
      sum_free += yg;
      ++n_free;
    } else if ((alpha(t) >= C && yy(t) < 0) || (alpha(t) <= 0 && yy(t) > 0)) {
      ub = std::min(ub, yg);
    } else {
      lb = std::max(lb, yg);
    }
  }
  const double rho = n_free ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;

  SvmFit fit;
  fit.alpha = alpha;
  SvmModel& m = fit.model;
  m = proto;
  m.bias = -rho;
  m.converged = converged;
  m.iterations = iter;
  std::vector<Eigen::Index> sv;
  for (Eigen::Index t = 0; t < n; ++t)
    if (alpha(t) > 0) sv.push_back(t);
  m.support.resize(static_cast<Eigen::Index>(sv.size()), X.cols());
  m.coef.resize(static_cast<Eigen::Index>(sv.size()));
  m.support_sqnorm.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t k = 0; k < sv.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    m.support.row(r) = X.row(sv[k]);
    m.coef(r) = alpha(sv[k]) * yy(sv[k]);
    m.support_sqnorm(r) = sq(sv[k]);
  }
  fit.train_decision.resize(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    double f = m.bias;
    for (std::size_t k = 0; k < sv.size(); ++k) f += m.coef(static_cast<Eigen::Index>(k)) * K(t, sv[k]);
    fit.train_decision(t) = f;
  }
  return fit;
}

/// Largest violation of the KKT conditions y f(x) >= 1 (alpha = 0),
/// = 1 (0 < alpha < C), <= 1 (alpha = C).
inline double kkt_violation(const SvmFit& fit, const std::vector<int>& y, double C) {
  double worst = 0;
  for (Eigen::Index t = 0; t < fit.alpha.size(); ++t) {
    const double m = y[static_cast<std::size_t>(t)] * fit.train_decision(t);
    const double a = fit.alpha(t);
    double v = 0;
    if (a <= 0) v = std::max(0.0, 1.0 - m);
    else if (a >= C) v = std::max(0.0, m - 1.0);
    else v = std::abs(m - 1.0);
    worst = std::max(worst, v);
  }
  return worst;
}

/// Wraps a fitted SVM behind the predict() interface; p_fall is the
/// logistic of the decision value.
class SvmClassifier {
 public:
  SvmClassifier(SvmModel model, std::size_t frames, std::size_t dims)
      : model_(std::move(model)), frames_(frames), dims_(dims) {}

  const SvmModel& model() const { return model_; }

  std::array<double, 2> predict(const FeatureMatrix& x) const {
    std::vector<float> flat(frames_ * dims_);
    flatten_into(x, frames_, dims_, flat.data());
    const double f = model_.decision(Eigen::Map<const Eigen::VectorXf>(flat.data(), static_cast<Eigen::Index>(flat.size())));
    const double p = 1.0 / (1.0 + std::exp(-f));
    return {p, 1.0 - p};
  }

 private:
  SvmModel model_;
  std::size_t frames_, dims_;
};

/// Flattened design matrix and +-1 labels of a whole source.
inline std::pair<Eigen::MatrixXf, std::vector<int>> design_matrix(const nn::ExampleSource& src, std::size_t frames,
                                                                   std::size_t dims) {
  Eigen::MatrixXf X(static_cast<Eigen::Index>(src.size()), static_cast<Eigen::Index>(frames * dims));
  std::vector<int> y(src.size());
  std::vector<float> flat(frames * dims);
  for (std::size_t i = 0; i < src.size(); ++i) {
    flatten_into(*src.features(i), frames, dims, flat.data());
    for (std::size_t k = 0; k < flat.size(); ++k) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = flat[k];
    y[i] = src.label(i) == Label::Fall ? 1 : -1;
  }
  return {std::move(X), std::move(y)};
}

}  // namespace falldet::exp
