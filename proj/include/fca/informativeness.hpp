#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "fca/encoder.hpp"
#include "fca/ops.hpp"
#include "fca/tape.hpp"

namespace fca {

/// Per-token informativeness of one layer: attention mass drawn by each
/// non-CLS column, averaged over heads.
struct InformativenessVector {
  std::vector<double> scores;  // one per non-CLS position
  std::size_t layer_index = 0;
};

/// Fine/coarse split of the non-CLS positions. Indices are sequence
/// positions (CLS = 0 is implicitly fine and never listed).
struct Partition {
  std::vector<std::size_t> fine_indices;    // ascending
  std::vector<std::size_t> coarse_indices;  // ascending
  std::size_t k = 0;
};

namespace detail {

inline void validate_maps(const AttentionMaps& maps,
                          const std::vector<std::uint8_t>& valid) {
  const std::size_t n = maps.size();
  if (maps.heads.empty() || n == 0) {
    throw ShapeError("informativeness: no attention maps");
  }
  std::size_t valid_count = 0;
  for (auto v : valid) valid_count += v;
  if (valid.size() != n || valid_count < 2) {
    throw ShapeError("informativeness: need at least 2 unmasked positions");
  }
  for (const Tensor& a : maps.heads) {
    if (a.rows() != n || a.cols() != n) {
      throw ShapeError("informativeness: map shape " + shape_str(a.shape()) +
                       " is not square over the sequence");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!valid[i]) continue;
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = a(i, j);
        if (v < -1e-12 || v > 1.0 + 1e-12) {
          throw NumericError("informativeness: attention entry outside [0,1]");
        }
        if (valid[j]) sum += v;
      }
      if (std::fabs(sum - 1.0) > 1e-6) {
        throw NumericError(
            "informativeness: degenerate attention map, row " +
            std::to_string(i) + " sums to " + std::to_string(sum));
      }
    }
  }
}

}  // namespace detail

/// Column sums of the attention maps excluding the diagonal, averaged over
/// heads. Masked rows contribute nothing; masked columns score zero. With
/// include_first_column the CLS column is scored too (used by diagnostics);
/// score_tokens below excludes it.
inline Tensor column_informativeness(Tape* tape, const AttentionMaps& maps,
                                     const std::vector<std::uint8_t>& valid,
                                     bool include_first_column) {
  detail::validate_maps(maps, valid);
  const std::size_t n = maps.size();
  const std::size_t first = include_first_column ? 0 : 1;
  const std::size_t out_len = n - first;
  const double inv_h = 1.0 / static_cast<double>(maps.heads.size());

  Tensor out({out_len});
  for (std::size_t j = first; j < n; ++j) {
    if (!valid[j]) continue;
    double acc = 0.0;
    for (const Tensor& a : maps.heads) {
      for (std::size_t i = 0; i < n; ++i) {
        if (i == j || !valid[i]) continue;
        acc += a(i, j);
      }
    }
    out(j - first) = acc * inv_h;
  }

  bool tracked = false;
  if (tape) {
    for (const Tensor& a : maps.heads) {
      tracked = detail::track(tape, {&a}) || tracked;
    }
  }
  detail::mark_output(out, tracked);
  if (tracked) {
    AttentionMaps captured = maps;
    std::vector<std::uint8_t> v = valid;
    tape->record([captured, v, out, tape, n, first, inv_h] {
      const std::vector<double>* go = tape->find_grad(out);
      if (!go) return;
      for (const Tensor& a : captured.heads) {
        if (!a.requires_grad()) continue;
        std::vector<double>& ga = tape->grad(a);
        for (std::size_t j = first; j < n; ++j) {
          if (!v[j]) continue;
          const double g = (*go)[j - first] * inv_h;
          for (std::size_t i = 0; i < n; ++i) {
            if (i == j || !v[i]) continue;
            ga[i * n + j] += g;
          }
        }
      }
    });
  }
  return out;
}

/// Informativeness of every non-CLS token (CLS is scored nowhere: it is
/// always fine by contract).
inline Tensor score_tokens(Tape* tape, const AttentionMaps& maps,
                           const std::vector<std::uint8_t>& valid) {
  return column_informativeness(tape, maps, valid,
                                /*include_first_column=*/false);
}

inline InformativenessVector score_values(const AttentionMaps& maps,
                                          const std::vector<std::uint8_t>& valid,
                                          std::size_t layer_index = 0) {
  Tensor t = score_tokens(nullptr, maps, valid);
  return InformativenessVector{t.values(), layer_index};
}

/// Top-k positions by score become fine; ties go to the lower original
/// position. Indices are 1-based sequence positions (position 0 is CLS).
/// An optional validity vector (aligned with scores) excludes padding from
/// both sides of the split.
inline Partition partition_topk(const std::vector<double>& scores,
                                std::size_t k,
                                const std::vector<std::uint8_t>* valid =
                                    nullptr) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!valid || (*valid)[i]) candidates.push_back(i);
  }
  if (k > candidates.size()) {
    throw ShapeError("partition_topk: k = " + std::to_string(k) +
                     " exceeds " + std::to_string(candidates.size()) +
                     " scored positions");
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) {
                     return scores[a] > scores[b];
                   });
  Partition p;
  p.k = k;
  p.fine_indices.assign(candidates.begin(), candidates.begin() + k);
  p.coarse_indices.assign(candidates.begin() + k, candidates.end());
  std::sort(p.fine_indices.begin(), p.fine_indices.end());
  std::sort(p.coarse_indices.begin(), p.coarse_indices.end());
  for (std::size_t& i : p.fine_indices) i += 1;  // to sequence positions
  for (std::size_t& i : p.coarse_indices) i += 1;
  return p;
}

/// Ranks by informativeness, 1 = highest; ties resolved toward the lower
/// original position. rank[i] is the rank of scores[i].
inline std::vector<std::size_t> informativeness_ranks(
    const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return scores[a] > scores[b];
                   });
  std::vector<std::size_t> rank(scores.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  return rank;
}

struct LayerDispersion {
  std::size_t layer = 0;
  double normalized_variance = 0.0;
  double normalized_std = 0.0;
};

/// Spread of each layer's informativeness after normalizing the scores to
/// sum to one. All-zero layers report zero spread.
inline std::vector<LayerDispersion> dispersion_stats(
    const std::vector<std::vector<double>>& per_layer_scores) {
  std::vector<LayerDispersion> out;
  for (std::size_t l = 0; l < per_layer_scores.size(); ++l) {
    const std::vector<double>& s = per_layer_scores[l];
    if (s.size() < 2) {
      throw ShapeError("dispersion_stats: layer " + std::to_string(l) +
                       " needs at least 2 scores");
    }
    double total = std::accumulate(s.begin(), s.end(), 0.0);
    LayerDispersion d;
    d.layer = l;
    if (total > 0.0) {
      const double mean = 1.0 / static_cast<double>(s.size());
      double var = 0.0;
      for (double v : s) {
        const double c = v / total - mean;
        var += c * c;
      }
      var /= static_cast<double>(s.size());
      d.normalized_variance = var;
      d.normalized_std = std::sqrt(var);
    }
    out.push_back(d);
  }
  return out;
}

inline void write_dispersion_csv(std::ostream& os,
                                 const std::vector<LayerDispersion>& stats) {
  os << "layer,normalized_variance,normalized_std\n";
  for (const LayerDispersion& d : stats) {
    os << d.layer << "," << d.normalized_variance << "," << d.normalized_std
       << "\n";
  }
}

}  // namespace fca
