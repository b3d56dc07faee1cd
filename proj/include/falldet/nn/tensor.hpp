#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "falldet/error.hpp"

namespace falldet::nn {

/// Row-major dense matrix; every tensor in the model is rank 2 (vectors are
/// 1 x n rows).
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A named learnable tensor with its gradient accumulator.
template <class T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;

  Parameter(std::string n, Mat<T> v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat<T>::Zero(value.rows(), value.cols());
  }

  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
};

/// Ordered parameter collection. Addresses are stable once built: nothing
/// may be added after the owning model finishes construction.
template <class T>
class ParameterSet {
 public:
  std::size_t add(std::string name, Mat<T> value) {
    if (index_.count(name)) throw InvalidConfig("duplicate parameter " + name);
    index_[name] = params_.size();
    params_.emplace_back(std::move(name), std::move(value));
    return params_.size() - 1;
  }

  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

  Parameter<T>& at(const std::string& name) { return params_[lookup(name)]; }
  const Parameter<T>& at(const std::string& name) const { return params_[lookup(name)]; }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  bool all_finite() const {
    for (const auto& p : params_)
      if (!p.value.allFinite()) return false;
    return true;
  }

  /// Copies values (not gradients) from a set with identical layout.
  void assign_values(const ParameterSet& other) {
    if (other.size() != size()) throw ShapeMismatch("parameter set layout differs");
    for (std::size_t i = 0; i < size(); ++i) {
      if (params_[i].name != other[i].name || params_[i].value.rows() != other[i].value.rows() ||
          params_[i].value.cols() != other[i].value.cols()) {
        throw ShapeMismatch("parameter " + params_[i].name + " layout differs");
      }
      params_[i].value = other[i].value;
    }
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidConfig("no parameter named " + name);
    return it->second;
  }

  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace falldet::nn
