#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fca/encoder.hpp"
#include "fca/informativeness.hpp"
#include "fca/ops.hpp"

namespace fca {

enum class PoolingMode { kAverage, kWeighted };

inline std::string pooling_mode_name(PoolingMode m) {
  return m == PoolingMode::kAverage ? "average_pooling" : "weighted_pooling";
}

inline PoolingMode pooling_mode_from_name(const std::string& s) {
  if (s == "average_pooling") return PoolingMode::kAverage;
  if (s == "weighted_pooling") return PoolingMode::kWeighted;
  throw DataError("unknown pooling mode '" + s + "'");
}

/// Static inference configuration of the hybrid sub-layer: how uninformative
/// tokens are aggregated and into how many coarse units.
struct FcaConfig {
  PoolingMode mode = PoolingMode::kAverage;
  std::size_t k_prime = 1;  // fixed across layers
};

/// Frozen per-layer fine-token counts plus the coarse-unit count.
struct LengthSchedule {
  std::vector<std::size_t> fine_counts;  // k_l, monotone non-increasing
  std::size_t k_prime = 0;
  PoolingMode mode = PoolingMode::kAverage;

  void validate() const {
    for (std::size_t l = 0; l + 1 < fine_counts.size(); ++l) {
      if (fine_counts[l + 1] > fine_counts[l]) {
        throw DataError("schedule: fine counts must be non-increasing, got " +
                        std::to_string(fine_counts[l + 1]) + " after " +
                        std::to_string(fine_counts[l]));
      }
    }
    for (std::size_t k : fine_counts) {
      if (k < 1) throw DataError("schedule: fine count must be at least 1");
    }
  }

  static LengthSchedule full_length(std::size_t layers, std::size_t max_len) {
    LengthSchedule s;
    s.fine_counts.assign(layers, max_len >= 1 ? max_len - 1 : 0);
    s.k_prime = 0;
    return s;
  }
};

inline nlohmann::json schedule_to_json(const LengthSchedule& s) {
  return nlohmann::json{{"k", s.fine_counts},
                        {"k_prime", s.k_prime},
                        {"mode", pooling_mode_name(s.mode)}};
}

inline LengthSchedule schedule_from_json(const nlohmann::json& j) {
  LengthSchedule s;
  s.fine_counts = j.at("k").get<std::vector<std::size_t>>();
  s.k_prime = j.at("k_prime").get<std::size_t>();
  s.mode = pooling_mode_from_name(j.at("mode").get<std::string>());
  s.validate();
  return s;
}

/// Learnable retention values, one array per layer indexed by
/// informativeness rank (entry 0 scales the most informative token). Every
/// entry lives in [0,1]; the trainer re-projects after each step.
struct RetentionParams {
  std::vector<Tensor> layer_values;

  static RetentionParams init_uniform(std::size_t layers,
                                      std::size_t capacity,
                                      std::uint64_t seed) {
    RetentionParams r;
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < layers; ++l) {
      Tensor t = Tensor::rand_uniform({capacity}, rng, 0.0, 1.0);
      t.set_requires_grad(true);
      r.layer_values.push_back(std::move(t));
    }
    return r;
  }

  std::size_t layers() const { return layer_values.size(); }

  void clamp_to_unit_interval() {
    for (Tensor& t : layer_values) {
      for (double& v : t.values()) v = std::clamp(v, 0.0, 1.0);
    }
  }

  bool within_unit_interval() const {
    for (const Tensor& t : layer_values) {
      for (double v : t.values()) {
        if (v < 0.0 || v > 1.0) return false;
      }
    }
    return true;
  }

  std::vector<double> layer_sums() const {
    std::vector<double> sums;
    for (const Tensor& t : layer_values) {
      double s = 0.0;
      for (double v : t.values()) s += v;
      sums.push_back(s);
    }
    return sums;
  }
};

inline nlohmann::json retention_to_json(const RetentionParams& r) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Tensor& t : r.layer_values) arr.push_back(t.values());
  return arr;
}

inline RetentionParams retention_from_json(const nlohmann::json& j) {
  RetentionParams r;
  for (const auto& row : j) {
    Tensor t({row.size()}, row.get<std::vector<double>>());
    t.set_requires_grad(true);
    r.layer_values.push_back(std::move(t));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Chunking and aggregation

/// Splits m consecutive items into min(k_prime, m) contiguous chunks with
/// sizes as equal as possible, larger chunks first. Returns (start, size)
/// pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> chunk_spans(
    std::size_t m, std::size_t k_prime) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  if (m == 0 || k_prime == 0) return spans;
  const std::size_t k = std::min(k_prime, m);
  const std::size_t base = m / k, extra = m % k;
  std::size_t start = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t size = base + (c < extra ? 1 : 0);
    spans.emplace_back(start, size);
    start += size;
  }
  return spans;
}

/// Mean of each contiguous chunk of the uninformative rows (Pooling over
/// the sequence dimension). Implemented as a constant pooling matrix so
/// gradients flow through a plain matmul.
inline Tensor aggregate_average(
    Tape* tape, const Tensor& rows,
    const std::vector<std::pair<std::size_t, std::size_t>>& chunks) {
  if (chunks.empty()) {
    throw ShapeError("aggregate_average: no chunks");
  }
  Tensor pool({chunks.size(), rows.rows()});
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    const auto [start, size] = chunks[c];
    for (std::size_t j = 0; j < size; ++j) {
      pool(c, start + j) = 1.0 / static_cast<double>(size);
    }
  }
  return matmul(tape, pool, rows);
}

/// Weighted mean per chunk, weights = softmax of the chunk members'
/// informativeness. Gradients flow into both the rows and the scores.
inline Tensor aggregate_weighted(
    Tape* tape, const Tensor& rows, const Tensor& scores,
    const std::vector<std::pair<std::size_t, std::size_t>>& chunks) {
  if (chunks.empty()) {
    throw ShapeError("aggregate_weighted: no chunks");
  }
  if (scores.numel() != rows.rows()) {
    throw ShapeError("aggregate_weighted: one score per row required");
  }
  std::vector<Tensor> units;
  for (const auto& [start, size] : chunks) {
    std::vector<std::size_t> members(size);
    for (std::size_t j = 0; j < size; ++j) members[j] = start + j;
    Tensor chunk_scores =
        reshape(tape, gather_rows(tape, scores, members), {1, size});
    Tensor alpha = softmax_rows(tape, chunk_scores);
    units.push_back(matmul(tape, alpha, gather_rows(tape, rows, members)));
  }
  return concat_rows(tape, units);
}

// ---------------------------------------------------------------------------
// Retention scaling (soft length learning)

/// Scales every non-CLS row by the retention value at its informativeness
/// rank: row_i <- r[rank(i)] * row_i. The rank assignment is taken from the
/// current score values; gradients flow into the rows and into r.
inline EncodedSequence apply_retention(Tape* tape, const EncodedSequence& x,
                                       const std::vector<double>& scores,
                                       const Tensor& retention) {
  const std::size_t len = x.length();
  if (scores.size() != len - 1) {
    throw ShapeError("apply_retention: need one score per non-CLS position");
  }
  if (retention.numel() < len - 1) {
    throw ShapeError("apply_retention: retention array shorter than the "
                     "sequence");
  }
  if (len == 1) return x;

  std::vector<std::size_t> ranks = informativeness_ranks(scores);
  std::vector<std::size_t> r_index(len - 1), rest(len - 1);
  for (std::size_t i = 0; i < len - 1; ++i) {
    r_index[i] = ranks[i] - 1;
    rest[i] = i + 1;
  }
  Tensor coeff = gather_rows(tape, retention, r_index);
  Tensor scaled = scale_rows(tape, gather_rows(tape, x.hidden, rest), coeff);
  Tensor cls = gather_rows(tape, x.hidden, {0});

  EncodedSequence out = x;
  out.hidden = concat_rows(tape, {cls, scaled});
  return out;
}

/// Reads the learned schedule off the retention sums: k_l = ceil(sum_l),
/// clamped to [1, capacity] and made non-increasing front to back.
inline LengthSchedule derive_schedule(const RetentionParams& retention,
                                      std::size_t k_prime,
                                      PoolingMode mode) {
  LengthSchedule s;
  s.k_prime = k_prime;
  s.mode = mode;
  std::size_t prev = 0;
  bool first = true;
  for (std::size_t l = 0; l < retention.layers(); ++l) {
    double sum = 0.0;
    for (double v : retention.layer_values[l].values()) sum += v;
    // Guard so an exactly integral sum is not bumped up by noise.
    auto k = static_cast<std::size_t>(
        std::max(1.0, std::ceil(sum - 1e-9)));
    k = std::min(k, retention.layer_values[l].numel());
    if (!first) k = std::min(k, prev);
    s.fine_counts.push_back(k);
    prev = k;
    first = false;
  }
  return s;
}

// ---------------------------------------------------------------------------
// The hybrid sub-layer

/// Scores the sequence from this layer's attention maps, keeps the top k_l
/// tokens at fine granularity (original order preserved), pools the rest
/// into at most k' coarse units, and emits [CLS + fine + coarse]. Padding is
/// dropped. Coarse units carry the mean original position of their chunk.
inline EncodedSequence fca_hybrid_sublayer(Tape* tape,
                                           const EncodedSequence& x,
                                           const AttentionMaps& maps,
                                           std::size_t k_l,
                                           const FcaConfig& cfg) {
  const std::size_t len = x.length();
  const std::size_t n_tokens = x.valid_count() - 1;  // non-CLS, non-pad
  if (k_l > n_tokens) {
    throw ShapeError("fca_hybrid_sublayer: k_l = " + std::to_string(k_l) +
                     " exceeds " + std::to_string(n_tokens) +
                     " scorable tokens");
  }
  const bool has_pad = x.valid_count() != len;
  if (k_l == n_tokens && !has_pad) return x;  // all fine: exact no-op

  Tensor scores = score_tokens(tape, maps, x.valid);
  std::vector<std::uint8_t> score_valid(x.valid.begin() + 1, x.valid.end());
  Partition part = partition_topk(scores.values(), k_l, &score_valid);

  std::vector<std::size_t> keep = {0};
  keep.insert(keep.end(), part.fine_indices.begin(), part.fine_indices.end());

  EncodedSequence out;
  out.positions = {x.positions[0]};
  for (std::size_t i : part.fine_indices) out.positions.push_back(x.positions[i]);

  std::vector<Tensor> pieces = {gather_rows(tape, x.hidden, keep)};
  const std::size_t m = part.coarse_indices.size();
  if (m > 0 && cfg.k_prime > 0) {
    auto chunks = chunk_spans(m, cfg.k_prime);
    Tensor un = gather_rows(tape, x.hidden, part.coarse_indices);
    if (cfg.mode == PoolingMode::kAverage) {
      pieces.push_back(aggregate_average(tape, un, chunks));
    } else {
      std::vector<std::size_t> score_idx;
      for (std::size_t i : part.coarse_indices) score_idx.push_back(i - 1);
      Tensor un_scores = gather_rows(tape, scores, score_idx);
      pieces.push_back(aggregate_weighted(tape, un, un_scores, chunks));
    }
    for (const auto& [start, size] : chunks) {
      double mean_pos = 0.0;
      for (std::size_t j = 0; j < size; ++j) {
        mean_pos += x.positions[part.coarse_indices[start + j]];
      }
      out.positions.push_back(mean_pos / static_cast<double>(size));
    }
  }
  out.hidden = pieces.size() == 1 ? pieces[0] : concat_rows(tape, pieces);
  out.valid.assign(out.hidden.rows(), 1);
  return out;
}

/// Per-layer target length for the hybrid sub-layer when the stored
/// schedule was derived at full length but the live sequence is shorter.
inline std::size_t effective_fine_count(std::size_t scheduled,
                                        std::size_t available) {
  return std::min(scheduled, available);
}

/// Full classification forward with the hybrid sub-layer inserted after
/// every MHA block: MHA -> hybrid at k_l -> FFN, all residual-wrapped. The
/// FFN of each layer therefore runs at the shortened length.
inline ForwardTrace fca_encoder_forward(Tape* tape, const EncoderModel& model,
                                        const std::vector<int>& token_ids,
                                        const std::vector<int>& positions,
                                        const LengthSchedule& schedule) {
  if (schedule.fine_counts.size() != model.config.layers) {
    throw ShapeError("fca_encoder_forward: schedule covers " +
                     std::to_string(schedule.fine_counts.size()) +
                     " layers, model has " +
                     std::to_string(model.config.layers));
  }
  schedule.validate();
  FcaConfig cfg{schedule.mode, schedule.k_prime};
  EncodedSequence x = embed(tape, model, token_ids, positions);
  ForwardTrace trace;
  for (std::size_t l = 0; l < model.config.layers; ++l) {
    auto [h1, maps] = attention_half(tape, model.layers[l], x, model.config);
    const std::size_t k_l = effective_fine_count(schedule.fine_counts[l],
                                                 h1.valid_count() - 1);
    EncodedSequence reduced = fca_hybrid_sublayer(tape, h1, maps, k_l, cfg);
    x = ffn_half(tape, model.layers[l], reduced);
    trace.layer_maps.push_back(std::move(maps));
  }
  trace.logits = classify(tape, model, x);
  trace.final_sequence = std::move(x);
  return trace;
}

/// Stage-2 forward: full length everywhere, each layer's MHA output scaled
/// by the retention values at the tokens' informativeness ranks.
inline ForwardTrace retention_forward(Tape* tape, const EncoderModel& model,
                                      const std::vector<int>& token_ids,
                                      const std::vector<int>& positions,
                                      const RetentionParams& retention) {
  if (retention.layers() != model.config.layers) {
    throw ShapeError("retention_forward: retention layer count mismatch");
  }
  EncodedSequence x = embed(tape, model, token_ids, positions);
  ForwardTrace trace;
  for (std::size_t l = 0; l < model.config.layers; ++l) {
    auto [h1, maps] = attention_half(tape, model.layers[l], x, model.config);
    // Ranks come from the current values; no gradient through the scores.
    InformativenessVector iv = score_values(maps, h1.valid, l);
    EncodedSequence scaled =
        apply_retention(tape, h1, iv.scores, retention.layer_values[l]);
    x = ffn_half(tape, model.layers[l], scaled);
    trace.layer_maps.push_back(std::move(maps));
  }
  trace.logits = classify(tape, model, x);
  trace.final_sequence = std::move(x);
  return trace;
}

// ---------------------------------------------------------------------------
// Pool-everything sub-layer (ablation baseline)

/// Contiguous average pooling of all non-CLS tokens down to target_len
/// units; no scoring, no fine tokens.
inline EncodedSequence pool_all_sublayer(Tape* tape, const EncodedSequence& x,
                                         std::size_t target_len) {
  const std::size_t n_tokens = x.valid_count() - 1;
  const bool has_pad = x.valid_count() != x.length();
  if (target_len >= n_tokens && !has_pad) return x;

  std::vector<std::size_t> token_rows;
  for (std::size_t i = 1; i < x.length(); ++i) {
    if (x.valid[i]) token_rows.push_back(i);
  }
  EncodedSequence out;
  out.positions = {x.positions[0]};
  std::vector<Tensor> pieces = {gather_rows(tape, x.hidden, {0})};
  if (!token_rows.empty() && target_len > 0) {
    auto chunks = chunk_spans(token_rows.size(), target_len);
    Tensor rows = gather_rows(tape, x.hidden, token_rows);
    pieces.push_back(aggregate_average(tape, rows, chunks));
    for (const auto& [start, size] : chunks) {
      double mean_pos = 0.0;
      for (std::size_t j = 0; j < size; ++j) {
        mean_pos += x.positions[token_rows[start + j]];
      }
      out.positions.push_back(mean_pos / static_cast<double>(size));
    }
  }
  out.hidden = pieces.size() == 1 ? pieces[0] : concat_rows(tape, pieces);
  out.valid.assign(out.hidden.rows(), 1);
  return out;
}

inline ForwardTrace pool_all_forward(Tape* tape, const EncoderModel& model,
                                     const std::vector<int>& token_ids,
                                     const std::vector<int>& positions,
                                     const std::vector<std::size_t>& lengths) {
  if (lengths.size() != model.config.layers) {
    throw ShapeError("pool_all_forward: one target length per layer");
  }
  EncodedSequence x = embed(tape, model, token_ids, positions);
  ForwardTrace trace;
  for (std::size_t l = 0; l < model.config.layers; ++l) {
    auto [h1, maps] = attention_half(tape, model.layers[l], x, model.config);
    EncodedSequence pooled = pool_all_sublayer(tape, h1, lengths[l]);
    x = ffn_half(tape, model.layers[l], pooled);
    trace.layer_maps.push_back(std::move(maps));
  }
  trace.logits = classify(tape, model, x);
  trace.final_sequence = std::move(x);
  return trace;
}

// ---------------------------------------------------------------------------
// K/V-only variant for token-level tasks

/// Attention with full-length queries against FCA-shortened keys and
/// values: per-token outputs keep the input length, only the dictionary
/// side shrinks. Scoring uses the previous layer's maps (this layer's maps
/// do not exist until K is fixed). Per-head maps have shape
/// [len x shortened].
inline std::pair<EncodedSequence, AttentionMaps> fca_attention_kv(
    Tape* tape, const LayerWeights& w, const EncodedSequence& x_full,
    const AttentionMaps& maps_prev, std::size_t k_l, const FcaConfig& cfg,
    const EncoderConfig& model_cfg) {
  EncodedSequence shortened =
      fca_hybrid_sublayer(tape, x_full, maps_prev, k_l, cfg);
  const double inv_sqrt_dk =
      1.0 / std::sqrt(static_cast<double>(model_cfg.head_dim()));
  std::vector<Tensor> head_outputs;
  AttentionMaps maps;
  for (std::size_t t = 0; t < model_cfg.heads; ++t) {
    Tensor q = matmul(tape, x_full.hidden, w.wq[t]);
    Tensor k = matmul(tape, shortened.hidden, w.wk[t]);
    Tensor v = matmul(tape, shortened.hidden, w.wv[t]);
    Tensor scores =
        scale(tape, matmul(tape, q, transpose(tape, k)), inv_sqrt_dk);
    Tensor a = softmax_rows(tape, scores);
    maps.heads.push_back(a);
    head_outputs.push_back(matmul(tape, a, v));
  }
  EncodedSequence out = x_full;
  out.hidden = matmul(tape, concat_cols(tape, head_outputs), w.wo);
  return {std::move(out), std::move(maps)};
}

}  // namespace fca
