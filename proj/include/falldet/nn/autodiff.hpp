#pragma once

// Reverse-mode differentiation over rank-2 tensors.
//
// A Tape records every intermediate value of one forward pass together with
// a closure that maps the node's output gradient to its inputs' gradients.
// Parameter leaves accumulate straight into Parameter::grad, so gradients of
// successive backward passes add up until ParameterSet::zero_grad().

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "falldet/error.hpp"
#include "falldet/nn/tensor.hpp"
#include "falldet/random.hpp"

namespace falldet::nn {

struct Var {
  std::size_t id = 0;
};

template <class T>
class Tape {
 public:
  using Matrix = Mat<T>;
  using BackwardFn = std::function<void(Tape&, const Matrix& grad)>;

  /// With record = false no backward closures are kept (inference).
  explicit Tape(bool record = true) : record_(record) { nodes_.reserve(256); }

  bool recording() const { return record_; }

  Var constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  Var parameter(Parameter<T>& p) {
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = record_;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  /// Adds an op result. `inputs` decide whether the result needs a gradient.
  Var push(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    if (record_) {
      for (Var v : inputs) n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
      if (n.requires_grad) n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  const Matrix& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  void accumulate(Var v, Matrix&& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.param) {
      n.param->grad += g;
    } else if (!n.has_grad) {
      n.grad = std::move(g);
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  template <class Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.param) {
      n.param->grad += g;
    } else if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Runs reverse accumulation from a 1x1 root seeded with `seed`.
  void backward(Var root, T seed = T(1)) {
    if (!record_) throw InvalidConfig("backward on a non-recording tape");
    const Matrix& v = value(root);
    if (v.rows() != 1 || v.cols() != 1) throw ShapeMismatch("backward root must be a scalar");
    accumulate(root, Matrix::Constant(1, 1, seed));
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    const Matrix* external = nullptr;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  bool record_;
  std::vector<Node> nodes_;
};

/// Records attention probabilities of the forward pass, one n x n matrix per
/// (layer, sequence, head) in call order.
template <class T>
struct AttentionProbe {
  std::vector<Mat<T>> probabilities;
};

/// Rows [offset, offset + length) of a packed batch belong to one sequence.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

namespace ops {

template <class T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (A.cols() != B.rows()) throw ShapeMismatch("matmul inner dimensions differ");
  Mat<T> C(A.rows(), B.cols());
  C.noalias() = A * B;
  return t.push(std::move(C), {a, b}, [a, b](Tape<T>& tp, const Mat<T>& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, (g * tp.value(b).transpose()).eval());
    if (tp.requires_grad(b)) tp.accumulate(b, (tp.value(a).transpose() * g).eval());
  });
}

/// y = x W + b with b a 1 x out row broadcast over rows.
template <class T>
Var linear(Tape<T>& t, Var x, Var w, Var b) {
  const auto& X = t.value(x);
  const auto& W = t.value(w);
  const auto& B = t.value(b);
  if (X.cols() != W.rows() || B.cols() != W.cols() || B.rows() != 1) {
    throw ShapeMismatch("linear: x " + std::to_string(X.rows()) + "x" + std::to_string(X.cols()) +
                        ", W " + std::to_string(W.rows()) + "x" + std::to_string(W.cols()));
  }
  Mat<T> Y(X.rows(), W.cols());
  Y.noalias() = X * W;
  Y.rowwise() += B.row(0);
  return t.push(std::move(Y), {x, w, b}, [x, w, b](Tape<T>& tp, const Mat<T>& g) {
    if (tp.requires_grad(x)) {
      Mat<T> dx(g.rows(), tp.value(w).rows());
      dx.noalias() = g * tp.value(w).transpose();
      tp.accumulate(x, std::move(dx));
    }
    if (tp.requires_grad(w)) {
      Mat<T> dw(tp.value(w).rows(), g.cols());
      dw.noalias() = tp.value(x).transpose() * g;
      tp.accumulate(w, std::move(dw));
    }
    if (tp.requires_grad(b)) tp.accumulate(b, g.colwise().sum().eval());
  });
}

template <class T>
Var add(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw ShapeMismatch("add: shapes differ");
  return t.push((A + B).eval(), {a, b}, [a, b](Tape<T>& tp, const Mat<T>& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

template <class T>
Var add_constant(Tape<T>& t, Var a, const Mat<T>& c) {
  const auto& A = t.value(a);
  if (A.rows() != c.rows() || A.cols() != c.cols()) throw ShapeMismatch("add_constant: shapes differ");
  return t.push((A + c).eval(), {a}, [a](Tape<T>& tp, const Mat<T>& g) { tp.accumulate(a, g); });
}

template <class T>
Var relu(Tape<T>& t, Var a) {
  Mat<T> Y = t.value(a).cwiseMax(T(0));
  return t.push(std::move(Y), {a}, [a](Tape<T>& tp, const Mat<T>& g) {
    const auto& X = tp.value(a);
    tp.accumulate(a, (g.array() * (X.array() > T(0)).template cast<T>()).matrix());
  });
}

/// Inverted dropout: kept units are scaled by 1 / (1 - p).
template <class T>
Var dropout(Tape<T>& t, Var a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw InvalidConfig("dropout rate must be < 1");
  const auto& X = t.value(a);
  auto keep = std::make_shared<Mat<T>>(X.rows(), X.cols());
  const T scale = T(1.0 / (1.0 - p));
  // Four 16-bit uniforms per draw.
  const auto cut = static_cast<std::uint32_t>(std::llround(p * 65536.0));
  T* k = keep->data();
  const Eigen::Index n = keep->size();
  auto lane = [&](std::uint64_t bits, int j) { return ((bits >> (16 * j)) & 0xffffu) < cut ? T(0) : scale; };
  Eigen::Index i = 0;
  for (; i + 4 <= n; i += 4) {
    const std::uint64_t bits = rng();
    k[i] = lane(bits, 0);
    k[i + 1] = lane(bits, 1);
    k[i + 2] = lane(bits, 2);
    k[i + 3] = lane(bits, 3);
  }
  if (i < n) {
    const std::uint64_t bits = rng();
    for (int j = 0; i < n; ++i, ++j) k[i] = lane(bits, j);
  }
  Mat<T> Y = X.cwiseProduct(*keep);
  return t.push(std::move(Y), {a}, [a, keep](Tape<T>& tp, const Mat<T>& g) {
    tp.accumulate(a, g.cwiseProduct(*keep));
  });
}

/// Row-wise layer normalization with learned gain and offset (1 x d rows).
template <class T>
Var layer_norm(Tape<T>& t, Var x, Var gain, Var offset, T eps = T(1e-5)) {
  const auto& X = t.value(x);
  const auto& G = t.value(gain);
  const auto& B = t.value(offset);
  if (G.cols() != X.cols() || B.cols() != X.cols()) throw ShapeMismatch("layer_norm: width differs");
  using Col = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  const Eigen::Index d = X.cols();
  auto xhat = std::make_shared<Mat<T>>(X.colwise() - X.rowwise().mean());
  auto inv_std = std::make_shared<Col>(
      (xhat->array().square().rowwise().sum() / T(d) + eps).rsqrt().matrix());
  xhat->array().colwise() *= inv_std->array();
  Mat<T> Y = xhat->array().rowwise() * G.row(0).array();
  Y.rowwise() += B.row(0);
  return t.push(std::move(Y), {x, gain, offset}, [x, gain, offset, xhat, inv_std, d](Tape<T>& tp, const Mat<T>& g) {
    if (tp.requires_grad(gain)) tp.accumulate(gain, g.cwiseProduct(*xhat).colwise().sum().eval());
    if (tp.requires_grad(offset)) tp.accumulate(offset, g.colwise().sum().eval());
    if (tp.requires_grad(x)) {
      Mat<T> dx = g.array().rowwise() * tp.value(gain).row(0).array();
      const Col mean_dxhat = dx.rowwise().mean();
      const Col mean_dxhat_xhat = dx.cwiseProduct(*xhat).rowwise().sum() / T(d);
      dx.colwise() -= mean_dxhat;
      dx.array() -= xhat->array().colwise() * mean_dxhat_xhat.array();
      dx.array().colwise() *= inv_std->array();
      tp.accumulate(x, std::move(dx));
    }
  });
}

/// In-place row softmax over columns with key_valid[c] != 0; masked columns
/// get exactly zero probability (additive -inf masking).
template <class T, class Derived>
void masked_softmax_rows(Eigen::MatrixBase<Derived>& S, std::span<const std::uint8_t> key_valid) {
  using Col = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  const bool all_valid = std::all_of(key_valid.begin(), key_valid.end(), [](std::uint8_t v) { return v != 0; });
  if (!all_valid) {
    for (Eigen::Index c = 0; c < S.cols(); ++c)
      if (!key_valid[static_cast<std::size_t>(c)]) S.col(c).setConstant(-std::numeric_limits<T>::infinity());
  }
  const Col mx = S.rowwise().maxCoeff();
  S.array().colwise() -= mx.array();
  S.array() = S.array().exp();
  if (!all_valid) {
    for (Eigen::Index c = 0; c < S.cols(); ++c)
      if (!key_valid[static_cast<std::size_t>(c)]) S.col(c).setZero();
  }
  const Col inv = S.rowwise().sum().cwiseInverse();
  S.array().colwise() *= inv.array();
}

/// Multi-head scaled dot-product attention over a packed batch.
///
/// qkv is (total rows) x (3 * heads * head_dim), columns [Q | K | V]; each
/// Segment is attended independently. key_valid has one flag per packed
/// row; invalid keys get exactly zero weight. Output is rows x (heads *
/// head_dim).
template <class T>
Var attention(Tape<T>& t, Var qkv, std::vector<Segment> segments, std::vector<std::uint8_t> key_valid, int heads,
              int head_dim, AttentionProbe<T>* probe = nullptr) {
  const auto& QKV = t.value(qkv);
  const Eigen::Index width = static_cast<Eigen::Index>(heads) * head_dim;
  if (QKV.cols() != 3 * width || static_cast<std::size_t>(QKV.rows()) != key_valid.size()) {
    throw ShapeMismatch("attention: qkv shape disagrees with heads or mask");
  }
  for (const Segment& s : segments)
    if (s.offset + s.length > key_valid.size()) throw ShapeMismatch("attention: segment out of range");
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  auto probs = std::make_shared<std::vector<Mat<T>>>();
  probs->reserve(segments.size() * static_cast<std::size_t>(heads));
  Mat<T> O = Mat<T>::Zero(QKV.rows(), width);
  for (const Segment& s : segments) {
    const auto off = static_cast<Eigen::Index>(s.offset);
    const auto n = static_cast<Eigen::Index>(s.length);
    std::span<const std::uint8_t> valid(key_valid.data() + s.offset, s.length);
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * head_dim;
      Mat<T> P(n, n);
      P.noalias() = QKV.block(off, c0, n, head_dim) * QKV.block(off, width + c0, n, head_dim).transpose();
      P *= scale;
      masked_softmax_rows<T>(P, valid);
      O.block(off, c0, n, head_dim).noalias() = P * QKV.block(off, 2 * width + c0, n, head_dim);
      if (probe) probe->probabilities.push_back(P);
      if (t.recording()) probs->push_back(std::move(P));
    }
  }
  return t.push(std::move(O), {qkv},
                [qkv, segments = std::move(segments), probs, heads, head_dim, scale, width](Tape<T>& tp,
                                                                                          const Mat<T>& g) {
                  const auto& QKV = tp.value(qkv);
                  Mat<T> d = Mat<T>::Zero(QKV.rows(), 3 * width);
                  Mat<T> dP, dS;
                  std::size_t idx = 0;
                  for (const Segment& s : segments) {
                    const auto off = static_cast<Eigen::Index>(s.offset);
                    const auto n = static_cast<Eigen::Index>(s.length);
                    for (int h = 0; h < heads; ++h, ++idx) {
                      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * head_dim;
                      const Mat<T>& P = (*probs)[idx];
                      const auto dO = g.block(off, c0, n, head_dim);
                      const auto Q = QKV.block(off, c0, n, head_dim);
                      const auto K = QKV.block(off, width + c0, n, head_dim);
                      const auto V = QKV.block(off, 2 * width + c0, n, head_dim);
                      dP.noalias() = dO * V.transpose();
                      d.block(off, 2 * width + c0, n, head_dim).noalias() = P.transpose() * dO;
                      const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = dP.cwiseProduct(P).rowwise().sum();
                      dS = P.cwiseProduct(dP.colwise() - rowdot) * scale;
                      d.block(off, c0, n, head_dim).noalias() = dS * K;
                      d.block(off, width + c0, n, head_dim).noalias() = dS.transpose() * Q;
                    }
                  }
                  tp.accumulate(qkv, std::move(d));
                });
}

/// Builds the packed sequence batch: for each segment, the (1 x d) token
/// row followed by that sequence's frames from `frames` (rows taken in
/// order). Returns rows = sum(1 + frames per segment).
template <class T>
Var prepend_token(Tape<T>& t, Var token, const Mat<T>& frames, std::vector<std::size_t> frame_counts) {
  const auto& C = t.value(token);
  if (C.rows() != 1 || C.cols() != frames.cols()) throw ShapeMismatch("token width differs from frames");
  std::size_t total = 0;
  for (auto n : frame_counts) total += n + 1;
  Mat<T> Y(static_cast<Eigen::Index>(total), frames.cols());
  Eigen::Index src = 0, dst = 0;
  for (auto n : frame_counts) {
    Y.row(dst++) = C.row(0);
    const auto rows = static_cast<Eigen::Index>(n);
    if (rows) Y.middleRows(dst, rows) = frames.middleRows(src, rows);
    dst += rows;
    src += rows;
  }
  return t.push(std::move(Y), {token}, [token, frame_counts = std::move(frame_counts)](Tape<T>& tp, const Mat<T>& g) {
    Mat<T> d = Mat<T>::Zero(1, g.cols());
    Eigen::Index row = 0;
    for (auto n : frame_counts) {
      d += g.row(row);
      row += static_cast<Eigen::Index>(n) + 1;
    }
    tp.accumulate(token, d);
  });
}

/// Selects rows (gather); backward scatter-adds.
template <class T>
Var gather_rows(Tape<T>& t, Var x, std::vector<std::size_t> rows) {
  const auto& X = t.value(x);
  Mat<T> Y(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) Y.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
  const Eigen::Index total_rows = X.rows();
  return t.push(std::move(Y), {x}, [x, rows = std::move(rows), total_rows](Tape<T>& tp, const Mat<T>& g) {
    Mat<T> d = Mat<T>::Zero(total_rows, g.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) d.row(static_cast<Eigen::Index>(rows[i])) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(x, d);
  });
}

/// Row-wise softmax of a logits batch.
template <class T>
Mat<T> softmax_rows(const Mat<T>& logits) {
  Mat<T> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const T mx = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

inline constexpr double kProbFloor = 1e-12;

/// Mean over the batch of -w[label] * log(softmax(logits)[label]), with the
/// probability floored at 1e-12. Returns a 1 x 1 node.
template <class T>
Var weighted_cross_entropy(Tape<T>& t, Var logits, std::vector<int> labels, std::array<T, 2> class_weights) {
  const auto& L = t.value(logits);
  if (static_cast<std::size_t>(L.rows()) != labels.size()) throw ShapeMismatch("one label per logits row");
  auto probs = std::make_shared<Mat<T>>(softmax_rows<T>(L));
  const T inv_b = T(1) / static_cast<T>(labels.size());
  T loss = T(0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const T p = (*probs)(static_cast<Eigen::Index>(i), labels[i]);
    loss -= class_weights[static_cast<std::size_t>(labels[i])] * std::log(std::max(p, T(kProbFloor)));
  }
  loss *= inv_b;
  return t.push(Mat<T>::Constant(1, 1, loss), {logits},
                [logits, labels = std::move(labels), class_weights, probs, inv_b](Tape<T>& tp, const Mat<T>& g) {
                  Mat<T> d = *probs;
                  for (std::size_t i = 0; i < labels.size(); ++i) {
                    const auto r = static_cast<Eigen::Index>(i);
                    d(r, labels[i]) -= T(1);
                    d.row(r) *= class_weights[static_cast<std::size_t>(labels[i])] * inv_b * g(0, 0);
                  }
                  tp.accumulate(logits, d);
                });
}

}  // namespace ops
}  // namespace falldet::nn
