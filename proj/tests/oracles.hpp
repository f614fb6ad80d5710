// Test-only reference implementations. These stay deliberately naive and
// independent of the library's compute paths; the suites compare against
// them rather than trusting hand-copied constants.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "fca/tape.hpp"
#include "fca/tensor.hpp"

namespace oracle {

// Plain triple-loop matrix product.
inline std::vector<double> matmul(const std::vector<double>& a,
                                  const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      out[i * n + j] = acc;
    }
  }
  return out;
}

// Two-pass population mean/variance.
inline std::pair<double, double> mean_variance(const std::vector<double>& x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  return {mean, var};
}

// Explicit double loop over i != j; column scores of one attention head.
// Rows and columns flagged invalid contribute nothing.
inline std::vector<double> column_scores(
    const std::vector<double>& map, std::size_t n,
    const std::vector<bool>* valid = nullptr) {
  std::vector<double> scores(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (valid && !(*valid)[j]) continue;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == j) continue;
      if (valid && !(*valid)[i]) continue;
      scores[j] += map[i * n + j];
    }
  }
  return scores;
}

// Central-difference gradient check. `forward` must rebuild the whole loss
// from the current leaf values; analytic gradients are taken from one taped
// backward pass. Returns the max relative error over all leaf elements.
inline double finite_difference_max_err(
    std::vector<fca::Tensor> leaves,
    const std::function<fca::Tensor(fca::Tape*)>& forward, double h = 1e-5) {
  for (fca::Tensor& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  fca::Tape tape;
  fca::Tensor loss = forward(&tape);
  tape.backward(loss);

  double worst = 0.0;
  for (fca::Tensor& leaf : leaves) {
    for (std::size_t i = 0; i < leaf.numel(); ++i) {
      const double saved = leaf(i);
      leaf(i) = saved + h;
      const double up = forward(nullptr).value();
      leaf(i) = saved - h;
      const double down = forward(nullptr).value();
      leaf(i) = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = leaf.has_grad() ? leaf.grad()[i] : 0.0;
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
      worst = std::max(worst, std::fabs(fd - an) / denom);
    }
  }
  return worst;
}

}  // namespace oracle
