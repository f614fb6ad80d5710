#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fca/ops.hpp"
#include "fca/tape.hpp"
#include "fca/tensor.hpp"

namespace fca {

// Vocabulary slots fixed across every file format and model.
inline constexpr int kClsId = 0;
inline constexpr int kSepId = 1;
inline constexpr int kPadId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReservedIds = 4;

struct EncoderConfig {
  std::size_t layers = 2;      // L
  std::size_t heads = 2;       // h
  std::size_t hidden = 8;      // d_h
  std::size_t ffn_inner = 32;  // d_ff
  std::size_t vocab_size = 16;
  std::size_t max_len = 16;    // n, CLS included
  std::size_t num_classes = 2;

  std::size_t head_dim() const { return hidden / heads; }

  void validate() const {
    if (layers < 1 || heads < 1 || max_len < 2) {
      throw ShapeError("encoder config: need layers >= 1, heads >= 1, "
                       "max_len >= 2");
    }
    if (hidden % heads != 0) {
      throw ShapeError("encoder config: hidden " + std::to_string(hidden) +
                       " not divisible by heads " + std::to_string(heads));
    }
    if (vocab_size <= kNumReservedIds) {
      throw ShapeError("encoder config: vocab_size must exceed the reserved "
                       "ids");
    }
  }
};

struct LayerWeights {
  std::vector<Tensor> wq, wk, wv;  // per head, [d_h x d_k]
  Tensor wo;                       // [h*d_v x d_h]
  Tensor w1, b1, w2, b2;           // position-wise FFN
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

/// Hidden states plus bookkeeping the reduction layers need: the original
/// position of every row (fractional once rows are pooled) and a validity
/// mask (0 marks padding). Row 0 is always the CLS slot.
struct EncodedSequence {
  Tensor hidden;                    // [len x d_h]
  std::vector<double> positions;    // length len
  std::vector<std::uint8_t> valid;  // length len, 1 = real token

  std::size_t length() const { return hidden.rows(); }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v;
    return n;
  }
};

/// Post-softmax attention maps of one layer, one [len x len] matrix per head.
struct AttentionMaps {
  std::vector<Tensor> heads;

  std::size_t size() const { return heads.empty() ? 0 : heads[0].rows(); }
};

struct EncoderModel {
  EncoderConfig config;
  Tensor token_embedding;     // [vocab x d_h]
  Tensor position_embedding;  // [max_len x d_h]
  std::vector<LayerWeights> layers;
  Tensor classifier_weight;  // [d_h x num_classes]
  Tensor classifier_bias;    // [num_classes]

  static EncoderModel init(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const double s = 0.02;
    EncoderModel m;
    m.config = cfg;
    m.token_embedding = Tensor::randn({cfg.vocab_size, cfg.hidden}, rng, s);
    m.position_embedding = Tensor::randn({cfg.max_len, cfg.hidden}, rng, s);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      LayerWeights w;
      for (std::size_t t = 0; t < cfg.heads; ++t) {
        w.wq.push_back(Tensor::randn({cfg.hidden, cfg.head_dim()}, rng, s));
        w.wk.push_back(Tensor::randn({cfg.hidden, cfg.head_dim()}, rng, s));
        w.wv.push_back(Tensor::randn({cfg.hidden, cfg.head_dim()}, rng, s));
      }
      w.wo = Tensor::randn({cfg.hidden, cfg.hidden}, rng, s);
      w.w1 = Tensor::randn({cfg.hidden, cfg.ffn_inner}, rng, s);
      w.b1 = Tensor::zeros({cfg.ffn_inner});
      w.w2 = Tensor::randn({cfg.ffn_inner, cfg.hidden}, rng, s);
      w.b2 = Tensor::zeros({cfg.hidden});
      w.ln1_gain = Tensor::ones({cfg.hidden});
      w.ln1_bias = Tensor::zeros({cfg.hidden});
      w.ln2_gain = Tensor::ones({cfg.hidden});
      w.ln2_bias = Tensor::zeros({cfg.hidden});
      m.layers.push_back(std::move(w));
    }
    m.classifier_weight =
        Tensor::randn({cfg.hidden, cfg.num_classes}, rng, s);
    m.classifier_bias = Tensor::zeros({cfg.num_classes});
    return m;
  }

  /// Stable parameter order; checkpoints, optimizers and gradient merging
  /// all rely on it.
  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out = {token_embedding, position_embedding};
    for (const LayerWeights& w : layers) {
      for (const Tensor& t : w.wq) out.push_back(t);
      for (const Tensor& t : w.wk) out.push_back(t);
      for (const Tensor& t : w.wv) out.push_back(t);
      out.push_back(w.wo);
      out.push_back(w.w1);
      out.push_back(w.b1);
      out.push_back(w.w2);
      out.push_back(w.b2);
      out.push_back(w.ln1_gain);
      out.push_back(w.ln1_bias);
      out.push_back(w.ln2_gain);
      out.push_back(w.ln2_bias);
    }
    out.push_back(classifier_weight);
    out.push_back(classifier_bias);
    return out;
  }

  void set_requires_grad(bool rg) {
    for (Tensor t : parameters()) t.set_requires_grad(rg);
  }

  void zero_grad() {
    for (Tensor t : parameters()) t.zero_grad();
  }

  EncoderModel deep_clone() const {
    EncoderModel m = *this;
    m.token_embedding = token_embedding.detached_clone();
    m.position_embedding = position_embedding.detached_clone();
    m.layers.clear();
    for (const LayerWeights& w : layers) {
      LayerWeights c;
      for (const Tensor& t : w.wq) c.wq.push_back(t.detached_clone());
      for (const Tensor& t : w.wk) c.wk.push_back(t.detached_clone());
      for (const Tensor& t : w.wv) c.wv.push_back(t.detached_clone());
      c.wo = w.wo.detached_clone();
      c.w1 = w.w1.detached_clone();
      c.b1 = w.b1.detached_clone();
      c.w2 = w.w2.detached_clone();
      c.b2 = w.b2.detached_clone();
      c.ln1_gain = w.ln1_gain.detached_clone();
      c.ln1_bias = w.ln1_bias.detached_clone();
      c.ln2_gain = w.ln2_gain.detached_clone();
      c.ln2_bias = w.ln2_bias.detached_clone();
      m.layers.push_back(std::move(c));
    }
    m.classifier_weight = classifier_weight.detached_clone();
    m.classifier_bias = classifier_bias.detached_clone();
    return m;
  }
};

/// Token + learned absolute position embeddings. The validity mask marks
/// trailing PAD ids; pads may only appear at the tail.
inline EncodedSequence embed(Tape* tape, const EncoderModel& model,
                             const std::vector<int>& token_ids,
                             const std::vector<int>& positions) {
  if (token_ids.empty() || token_ids.size() != positions.size()) {
    throw ShapeError("embed: ids/positions must be non-empty and congruent");
  }
  if (token_ids[0] != kClsId) {
    throw DataError("embed: sequence must start with the CLS id");
  }
  std::vector<std::size_t> tok_idx, pos_idx;
  std::vector<std::uint8_t> valid;
  bool saw_pad = false;
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    if (token_ids[i] < 0 ||
        static_cast<std::size_t>(token_ids[i]) >= model.config.vocab_size) {
      throw DataError("embed: token id " + std::to_string(token_ids[i]) +
                      " outside vocabulary of size " +
                      std::to_string(model.config.vocab_size));
    }
    if (positions[i] < 0 ||
        static_cast<std::size_t>(positions[i]) >= model.config.max_len) {
      throw DataError("embed: position " + std::to_string(positions[i]) +
                      " exceeds max_len " +
                      std::to_string(model.config.max_len));
    }
    const bool is_pad = token_ids[i] == kPadId;
    if (saw_pad && !is_pad) {
      throw DataError("embed: non-pad token after padding at index " +
                      std::to_string(i));
    }
    saw_pad = saw_pad || is_pad;
    valid.push_back(is_pad ? 0 : 1);
    tok_idx.push_back(static_cast<std::size_t>(token_ids[i]));
    pos_idx.push_back(static_cast<std::size_t>(positions[i]));
  }
  Tensor tok = gather_rows(tape, model.token_embedding, tok_idx);
  Tensor pos = gather_rows(tape, model.position_embedding, pos_idx);
  EncodedSequence seq;
  seq.hidden = add(tape, tok, pos);
  seq.positions.assign(positions.begin(), positions.end());
  seq.valid = std::move(valid);
  return seq;
}

/// Scaled dot-product multi-head self-attention. Padding columns are masked
/// out of the softmax, so each returned map is row-stochastic over valid
/// positions and exactly zero elsewhere.
inline std::pair<EncodedSequence, AttentionMaps> multi_head_attention(
    Tape* tape, const LayerWeights& w, const EncodedSequence& x,
    const EncoderConfig& cfg) {
  const std::size_t n = x.length();
  if (n == 0) throw ShapeError("multi_head_attention: empty sequence");

  ElementMask mask;
  const bool has_pad = x.valid_count() != n;
  if (has_pad) {
    mask.resize(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) mask[i * n + j] = x.valid[j];
    }
  }

  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  std::vector<Tensor> head_outputs;
  AttentionMaps maps;
  for (std::size_t t = 0; t < cfg.heads; ++t) {
    Tensor q = matmul(tape, x.hidden, w.wq[t]);
    Tensor k = matmul(tape, x.hidden, w.wk[t]);
    Tensor v = matmul(tape, x.hidden, w.wv[t]);
    Tensor scores = scale(tape, matmul(tape, q, transpose(tape, k)), inv_sqrt_dk);
    Tensor a = softmax_rows(tape, scores, has_pad ? &mask : nullptr);
    maps.heads.push_back(a);
    head_outputs.push_back(matmul(tape, a, v));
  }
  Tensor merged = concat_cols(tape, head_outputs);
  EncodedSequence out = x;
  out.hidden = matmul(tape, merged, w.wo);
  return {std::move(out), std::move(maps)};
}

/// Position-wise feed-forward: GeLU between two affine maps.
inline EncodedSequence ffn(Tape* tape, const LayerWeights& w,
                           const EncodedSequence& x) {
  Tensor inner = gelu(
      tape, add_row_broadcast(tape, matmul(tape, x.hidden, w.w1), w.b1));
  EncodedSequence out = x;
  out.hidden =
      add_row_broadcast(tape, matmul(tape, inner, w.w2), w.b2);
  return out;
}

/// MHA wrapped with its residual connection and layer norm. Returned maps
/// are the post-softmax matrices of this layer.
inline std::pair<EncodedSequence, AttentionMaps> attention_half(
    Tape* tape, const LayerWeights& w, const EncodedSequence& x,
    const EncoderConfig& cfg) {
  auto [attn, maps] = multi_head_attention(tape, w, x, cfg);
  EncodedSequence out = x;
  out.hidden = layer_norm(tape, add(tape, x.hidden, attn.hidden), w.ln1_gain,
                          w.ln1_bias);
  return {std::move(out), std::move(maps)};
}

/// FFN wrapped with its residual connection and layer norm.
inline EncodedSequence ffn_half(Tape* tape, const LayerWeights& w,
                                const EncodedSequence& x) {
  EncodedSequence f = ffn(tape, w, x);
  EncodedSequence out = x;
  out.hidden =
      layer_norm(tape, add(tape, x.hidden, f.hidden), w.ln2_gain, w.ln2_bias);
  return out;
}

inline std::pair<EncodedSequence, AttentionMaps> encoder_layer(
    Tape* tape, const LayerWeights& w, const EncodedSequence& x,
    const EncoderConfig& cfg) {
  auto [h1, maps] = attention_half(tape, w, x, cfg);
  return {ffn_half(tape, w, h1), std::move(maps)};
}

/// Linear readout of the CLS row.
inline Tensor classify(Tape* tape, const EncoderModel& model,
                       const EncodedSequence& x) {
  if (x.length() == 0) throw ShapeError("classify: empty sequence");
  Tensor cls = gather_rows(tape, x.hidden, {0});
  return add_row_broadcast(
      tape, matmul(tape, cls, model.classifier_weight), model.classifier_bias);
}

/// Everything a full pass produces that downstream analysis needs.
struct ForwardTrace {
  Tensor logits;                          // [1 x num_classes]
  std::vector<AttentionMaps> layer_maps;  // per layer
  EncodedSequence final_sequence;
};

inline ForwardTrace encoder_forward(Tape* tape, const EncoderModel& model,
                                    const std::vector<int>& token_ids,
                                    const std::vector<int>& positions) {
  EncodedSequence x = embed(tape, model, token_ids, positions);
  ForwardTrace trace;
  for (const LayerWeights& w : model.layers) {
    auto [next, maps] = encoder_layer(tape, w, x, model.config);
    x = std::move(next);
    trace.layer_maps.push_back(std::move(maps));
  }
  trace.logits = classify(tape, model, x);
  trace.final_sequence = std::move(x);
  return trace;
}

inline std::vector<int> default_positions(std::size_t n) {
  std::vector<int> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<int>(i);
  return p;
}

}  // namespace fca
