#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fca/tensor.hpp"

namespace fca {

/// Reverse-mode tape. Ops append backward rules during the forward pass;
/// backward() replays them in reverse and publishes gradients to leaf
/// tensors. One backward per tape; reset() rearms it.
///
/// A tape owns every gradient buffer of the pass it recorded, so independent
/// tapes over shared (read-only) parameters never touch each other — the
/// training loop exploits this to evaluate batch examples in parallel.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> rule) { steps_.push_back(std::move(rule)); }

  /// Registers a grad-requiring op input so backward() can publish to it.
  void watch(const Tensor& t) { watched_.emplace(t.id(), t); }

  /// Gradient buffer for t, created zero-filled on first use.
  std::vector<double>& grad(const Tensor& t) {
    auto it = grads_.find(t.id());
    if (it == grads_.end()) {
      it = grads_.emplace(t.id(), std::vector<double>(t.numel(), 0.0)).first;
    }
    return it->second;
  }

  const std::vector<double>* find_grad(const Tensor& t) const {
    auto it = grads_.find(t.id());
    return it == grads_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return steps_.size(); }

  /// Runs reverse accumulation from a scalar loss. With publish, every leaf
  /// tensor reached by the sweep gets its Tensor::grad() updated (+=).
  void backward(const Tensor& loss, bool publish = true) {
    if (consumed_) {
      throw NumericError("backward: tape already consumed; reset() first");
    }
    if (loss.numel() != 1) {
      throw ShapeError("backward: loss must be scalar, got " +
                       shape_str(loss.shape()));
    }
    if (steps_.empty()) {
      throw NumericError("backward: empty tape");
    }
    consumed_ = true;
    grad(loss).assign(1, 1.0);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    if (publish) {
      for (auto& [id, t] : watched_) {
        if (!t.is_leaf() || !t.requires_grad()) continue;
        if (const std::vector<double>* g = find_grad(t)) {
          t.accumulate_grad(*g);
        }
      }
    }
  }

  void reset() {
    steps_.clear();
    grads_.clear();
    watched_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> steps_;
  std::unordered_map<const void*, std::vector<double>> grads_;
  std::unordered_map<const void*, Tensor> watched_;
  bool consumed_ = false;
};

}  // namespace fca
