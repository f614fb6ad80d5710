#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fca/errors.hpp"

namespace fca {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major tensor of 64-bit floats with an optional gradient slot.
/// Copies share storage; use detached_clone() for a deep copy. Gradients are
/// written by Tape::backward and accumulate until zero_grad().
class Tensor {
 public:
  Tensor() : s_(std::make_shared<Storage>()) {}

  explicit Tensor(Shape shape) : s_(std::make_shared<Storage>()) {
    s_->shape = std::move(shape);
    s_->v.assign(shape_numel(s_->shape), 0.0);
  }

  Tensor(Shape shape, std::vector<double> values)
      : s_(std::make_shared<Storage>()) {
    if (values.size() != shape_numel(shape)) {
      throw ShapeError("tensor: " + std::to_string(values.size()) +
                       " values do not fill shape " + shape_str(shape));
    }
    s_->shape = std::move(shape);
    s_->v = std::move(values);
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double fill) {
    Tensor t(std::move(shape));
    std::fill(t.values().begin(), t.values().end(), fill);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& x : t.values()) x = dist(rng);
    return t;
  }

  static Tensor rand_uniform(Shape shape, std::mt19937_64& rng, double lo,
                             double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& x : t.values()) x = dist(rng);
    return t;
  }

  const Shape& shape() const { return s_->shape; }
  std::size_t ndim() const { return s_->shape.size(); }
  std::size_t numel() const { return s_->v.size(); }

  // 2-D views; a 1-D tensor counts as a single column of rows.
  std::size_t rows() const { return ndim() ? s_->shape[0] : 0; }
  std::size_t cols() const {
    if (ndim() == 0) return 0;
    return ndim() == 1 ? 1 : numel() / s_->shape[0];
  }

  double& operator()(std::size_t i) { return s_->v[i]; }
  double operator()(std::size_t i) const { return s_->v[i]; }
  double& operator()(std::size_t i, std::size_t j) {
    return s_->v[i * cols() + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return s_->v[i * cols() + j];
  }

  double value() const {
    if (numel() != 1) {
      throw ShapeError("tensor: value() on non-scalar " + shape_str(shape()));
    }
    return s_->v[0];
  }

  std::vector<double>& values() { return s_->v; }
  const std::vector<double>& values() const { return s_->v; }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    s_->requires_grad = rg;
    return *this;
  }

  // Leaf tensors are user-created; op results are marked interior and do not
  // receive published gradients.
  bool is_leaf() const { return s_->leaf; }
  Tensor& mark_interior() {
    s_->leaf = false;
    return *this;
  }

  bool has_grad() const { return !s_->g.empty(); }
  const std::vector<double>& grad() const {
    if (s_->g.empty()) {
      throw NumericError("tensor: gradient not populated");
    }
    return s_->g;
  }
  void zero_grad() { s_->g.clear(); }

  void accumulate_grad(const std::vector<double>& contribution) {
    if (contribution.size() != s_->v.size()) {
      throw ShapeError("tensor: gradient length " +
                       std::to_string(contribution.size()) +
                       " does not match " + std::to_string(s_->v.size()));
    }
    if (s_->g.empty()) s_->g.assign(s_->v.size(), 0.0);
    for (std::size_t i = 0; i < contribution.size(); ++i) {
      s_->g[i] += contribution[i];
    }
  }

  Tensor detached_clone() const {
    Tensor t(s_->shape, s_->v);
    return t;
  }

  /// Storage identity; stable key for gradient bookkeeping.
  const void* id() const { return s_.get(); }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> v;
    std::vector<double> g;
    bool requires_grad = false;
    bool leaf = true;
  };
  std::shared_ptr<Storage> s_;
};

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
  for (double x : t.values()) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": non-finite value produced");
    }
  }
}

}  // namespace detail

}  // namespace fca
