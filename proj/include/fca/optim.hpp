#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fca/tensor.hpp"

namespace fca {

/// Adam state over an ordered parameter list: one first/second moment array
/// per parameter, plus the shared step counter and hyper-parameters.
struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step_count = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

inline AdamState make_adam_state(const std::vector<Tensor>& params,
                                 double learning_rate, double beta1 = 0.9,
                                 double beta2 = 0.999, double epsilon = 1e-8) {
  AdamState st;
  st.learning_rate = learning_rate;
  st.beta1 = beta1;
  st.beta2 = beta2;
  st.epsilon = epsilon;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Tensor& p : params) {
    st.m.emplace_back(p.numel(), 0.0);
    st.v.emplace_back(p.numel(), 0.0);
  }
  return st;
}

/// One bias-corrected Adam update. grads[i] may be null (treated as zero).
inline void adam_step(std::vector<Tensor>& params,
                      const std::vector<const std::vector<double>*>& grads,
                      AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: parameter/gradient/state count mismatch");
  }
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, state.step_count);
  const double bc2 = 1.0 - std::pow(state.beta2, state.step_count);
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::vector<double>& m = state.m[p];
    std::vector<double>& v = state.v[p];
    if (m.size() != params[p].numel()) {
      throw ShapeError("adam_step: moment/parameter shape mismatch at index " +
                       std::to_string(p));
    }
    if (grads[p] && grads[p]->size() != m.size()) {
      throw ShapeError("adam_step: gradient shape mismatch at index " +
                       std::to_string(p));
    }
    std::vector<double>& w = params[p].values();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = grads[p] ? (*grads[p])[i] : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

/// Convenience overload reading published Tensor gradients.
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
  std::vector<const std::vector<double>*> grads;
  grads.reserve(params.size());
  for (const Tensor& p : params) {
    grads.push_back(p.has_grad() ? &p.grad() : nullptr);
  }
  adam_step(params, grads, state);
}

}  // namespace fca
