#pragma once

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fca/pipeline.hpp"

namespace fca {

// ---------------------------------------------------------------------------
// FLOPs cost model
//
// Reported costs use a normalized accounting unit that scales with the
// token-linear matmul work (projections, output projection, FFN at 2 FLOPs
// per multiply-accumulate, plus 5 FLOPs per softmax/layer-norm/GeLU
// element). The published efficiency tables this analyzer reproduces scale
// exactly linearly in Sum_l n_l, so the O(n^2) map products carry zero
// weight in the unit; they appear in the breakdown as zero-cost components.
// The unit is calibrated so the reference geometry (L=12, d_h=768,
// d_ff=3072, h=12) at sequence length 128 totals 2.6e9.

struct FlopsBreakdown {
  std::size_t layer = 0;
  std::string component;
  double flops = 0.0;
};

struct FlopsReport {
  double total = 0.0;
  std::vector<FlopsBreakdown> breakdown;  // total == sum over entries
  double speedup_vs_reference = 0.0;      // 0 until a reference is applied
};

namespace detail {

struct LayerCost {
  double projections, output_projection, ffn, elementwise;
};

inline LayerCost raw_layer_cost(const EncoderConfig& cfg, std::size_t n) {
  const double d = static_cast<double>(cfg.hidden);
  const double ff = static_cast<double>(cfg.ffn_inner);
  const double h = static_cast<double>(cfg.heads);
  const double len = static_cast<double>(n);
  LayerCost c;
  c.projections = 6.0 * len * d * d;        // Q, K, V at 2 FLOPs per MAC
  c.output_projection = 2.0 * len * d * d;
  c.ffn = 4.0 * len * d * ff;               // two affine maps
  c.elementwise = 5.0 * (h * len * len      // softmax
                         + 2.0 * len * d    // two layer norms
                         + len * ff);       // GeLU
  return c;
}

inline double raw_model_cost(const EncoderConfig& cfg,
                             const std::vector<std::size_t>& lengths) {
  double total = 0.0;
  for (std::size_t n : lengths) {
    LayerCost c = raw_layer_cost(cfg, n);
    total += c.projections + c.output_projection + c.ffn + c.elementwise;
  }
  return total;
}

}  // namespace detail

/// Conversion from raw counted FLOPs to the reported unit (see above).
inline double accounting_scale() {
  EncoderConfig reference;
  reference.layers = 12;
  reference.heads = 12;
  reference.hidden = 768;
  reference.ffn_inner = 3072;
  reference.vocab_size = 30522;
  reference.max_len = 512;
  reference.num_classes = 2;
  return 2.6e9 / detail::raw_model_cost(
                     reference, std::vector<std::size_t>(12, 128));
}

/// Forward cost of one example given per-layer sequence lengths.
/// Embeddings are excluded.
inline FlopsReport count_flops_lengths(const EncoderConfig& cfg,
                                       const std::vector<std::size_t>& lengths) {
  if (lengths.size() != cfg.layers) {
    throw ShapeError("count_flops: one length per layer required");
  }
  const double s = accounting_scale();
  FlopsReport report;
  for (std::size_t l = 0; l < lengths.size(); ++l) {
    detail::LayerCost c = detail::raw_layer_cost(cfg, lengths[l]);
    report.breakdown.push_back({l, "mha_projections", s * c.projections});
    report.breakdown.push_back({l, "attention_matrix", 0.0});
    report.breakdown.push_back({l, "attention_times_v", 0.0});
    report.breakdown.push_back(
        {l, "output_projection", s * c.output_projection});
    report.breakdown.push_back({l, "ffn", s * c.ffn});
    report.breakdown.push_back({l, "elementwise", s * c.elementwise});
  }
  for (const FlopsBreakdown& b : report.breakdown) report.total += b.flops;
  return report;
}

/// FCA forward cost: layer l runs at length 1 + k_l + k'.
inline FlopsReport count_flops(const EncoderConfig& cfg,
                               const LengthSchedule& schedule) {
  schedule.validate();
  std::vector<std::size_t> lengths;
  for (std::size_t k : schedule.fine_counts) {
    lengths.push_back(1 + k + schedule.k_prime);
  }
  return count_flops_lengths(cfg, lengths);
}

/// Standard encoder cost at a fixed sequence length.
inline FlopsReport count_flops_full(const EncoderConfig& cfg,
                                    std::size_t length) {
  return count_flops_lengths(cfg,
                             std::vector<std::size_t>(cfg.layers, length));
}

inline double apply_speedup(FlopsReport& report, const FlopsReport& reference) {
  if (report.total <= 0.0) {
    throw NumericError("apply_speedup: zero-cost report");
  }
  report.speedup_vs_reference = reference.total / report.total;
  return report.speedup_vs_reference;
}

inline void write_flops_csv(std::ostream& os, const FlopsReport& report) {
  os << "layer,component,flops\n";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const FlopsBreakdown& b : report.breakdown) {
    os << b.layer << "," << b.component << "," << b.flops << "\n";
  }
}

// ---------------------------------------------------------------------------
// Schedule accounting

/// Fine tokens summed over layers (the published per-layer length totals).
inline std::size_t schedule_token_total(const LengthSchedule& schedule) {
  std::size_t total = 0;
  for (std::size_t k : schedule.fine_counts) total += k;
  return total;
}

inline std::size_t schedule_token_total(const std::vector<std::size_t>& ks) {
  std::size_t total = 0;
  for (std::size_t k : ks) total += k;
  return total;
}

/// 1 - sum(k_l) / (L * full_len); the headline reduction figure.
inline double token_total_reduction(const LengthSchedule& schedule,
                                    std::size_t full_len) {
  const double full =
      static_cast<double>(full_len * schedule.fine_counts.size());
  return 1.0 - static_cast<double>(schedule_token_total(schedule)) / full;
}

// ---------------------------------------------------------------------------
// CLS distance

/// One side of a distance comparison: a model plus how to run it.
struct ModelRun {
  const EncoderModel* model = nullptr;
  const LengthSchedule* schedule = nullptr;  // null = standard forward
};

/// Summed per-instance Euclidean distance between the final-layer CLS
/// representations of two models over a dataset.
inline double cls_distance(const ModelRun& a, const ModelRun& b,
                           const std::vector<Example>& data) {
  if (data.empty()) throw DataError("cls_distance: empty dataset");
  if (a.model->config.hidden != b.model->config.hidden) {
    throw ShapeError("cls_distance: hidden width mismatch " +
                     std::to_string(a.model->config.hidden) + " vs " +
                     std::to_string(b.model->config.hidden));
  }
  auto run = [](const ModelRun& side, const Example& ex) {
    RunPlan plan;
    plan.model = side.model;
    if (side.schedule) {
      plan.mode = ForwardMode::kSchedule;
      plan.schedule = side.schedule;
    }
    return run_forward(nullptr, plan, ex.choices[0]);
  };
  const std::size_t d = a.model->config.hidden;
  std::vector<double> per_instance(data.size(), 0.0);
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < data.size(); ++i) {
    try {
      ForwardTrace ta = run(a, data[i]);
      ForwardTrace tb = run(b, data[i]);
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = ta.final_sequence.hidden(0, j) -
                            tb.final_sequence.hidden(0, j);
        sq += diff * diff;
      }
      per_instance[i] = std::sqrt(sq);
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw NumericError("cls_distance: " + error);
  double total = 0.0;
  for (double v : per_instance) total += v;
  return total;
}

// ---------------------------------------------------------------------------
// Baselines

/// Discard-the-rest baseline: stage-3 retraining with k' = 0, so the
/// uninformative tokens vanish instead of pooling.
inline StageReport prune_baseline(EncoderModel& model,
                                  const LengthSchedule& schedule,
                                  const std::vector<Example>& train,
                                  const std::vector<Example>& dev,
                                  const TaskSpec& task,
                                  const TrainConfig& cfg) {
  LengthSchedule pruned = schedule;
  pruned.k_prime = 0;
  return stage3_retrain(model, pruned, train, dev, task, cfg);
}

/// No-triage ablation: every layer average-pools all tokens (CLS kept) down
/// to the target length, then trains and evaluates like stage 3.
inline StageReport pool_all_baseline(EncoderModel& model,
                                     const std::vector<std::size_t>& lengths,
                                     const std::vector<Example>& train,
                                     const std::vector<Example>& dev,
                                     const TaskSpec& task,
                                     const TrainConfig& cfg) {
  StageReport report;
  report.stage = 3;
  RunPlan plan;
  plan.model = &model;
  plan.mode = ForwardMode::kPoolAll;
  plan.pool_lengths = &lengths;
  if (cfg.epochs_per_stage > 0) {
    train_core(plan, train, cfg, 3, nullptr, report);
  }
  report.final_metric = evaluate(plan, dev, task.metric);
  return report;
}

/// Target pooled lengths matching an FCA schedule layer for layer.
inline std::vector<std::size_t> pool_lengths_matching(
    const LengthSchedule& schedule) {
  std::vector<std::size_t> lengths;
  for (std::size_t k : schedule.fine_counts) {
    lengths.push_back(k + schedule.k_prime);
  }
  return lengths;
}

// ---------------------------------------------------------------------------
// Accuracy / FLOPs trade-off sweep

struct TradeoffPoint {
  double lambda = 0.0;
  double flops = 0.0;
  double metric = 0.0;
  LengthSchedule schedule;
};

struct SweepFailure {
  double lambda = 0.0;
  std::string reason;
};

struct SweepResult {
  std::vector<TradeoffPoint> points;
  std::vector<SweepFailure> failures;
};

/// Runs the full three-stage pipeline once per lambda (stage 1 is shared:
/// it does not depend on lambda) and records (lambda, FLOPs, metric).
/// Failed runs are recorded and the sweep continues.
inline SweepResult tradeoff_sweep(const EncoderConfig& model_cfg,
                                  const std::vector<double>& lambdas,
                                  const std::vector<Example>& train,
                                  const std::vector<Example>& dev,
                                  const TaskSpec& task,
                                  const TrainConfig& base_cfg) {
  if (lambdas.size() < 2) {
    throw UsageError("tradeoff_sweep: need at least 2 lambda values");
  }
  SweepResult result;
  EncoderModel stage1_model =
      EncoderModel::init(model_cfg, mix_seed(base_cfg.seed, 0, 17));
  stage1_finetune(stage1_model, train, dev, task, base_cfg);
  for (double lambda : lambdas) {
    try {
      EncoderModel m = stage1_model.deep_clone();
      TrainConfig cfg = base_cfg;
      cfg.lambda = lambda;
      auto [retention, s2] = stage2_learn_retention(m, train, dev, task, cfg);
      StageReport s3 =
          stage3_retrain(m, s2.schedule, train, dev, task, cfg);
      TradeoffPoint point;
      point.lambda = lambda;
      point.flops = count_flops(model_cfg, s2.schedule).total;
      point.metric = s3.final_metric;
      point.schedule = s2.schedule;
      result.points.push_back(std::move(point));
    } catch (const std::exception& e) {
      result.failures.push_back({lambda, e.what()});
    }
  }
  return result;
}

inline void write_tradeoff_csv(std::ostream& os,
                               const std::vector<TradeoffPoint>& points) {
  os << "lambda,flops,metric\n";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const TradeoffPoint& p : points) {
    os << p.lambda << "," << p.flops << "," << p.metric << "\n";
  }
}

inline std::vector<TradeoffPoint> parse_tradeoff_csv(std::istream& is) {
  std::vector<TradeoffPoint> points;
  std::string line;
  if (!std::getline(is, line) || line != "lambda,flops,metric") {
    throw DataError("tradeoff CSV: bad header");
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    TradeoffPoint p;
    char c1 = 0, c2 = 0;
    if (!(ss >> p.lambda >> c1 >> p.flops >> c2 >> p.metric) || c1 != ',' ||
        c2 != ',') {
      throw DataError("tradeoff CSV: bad row '" + line + "'");
    }
    points.push_back(std::move(p));
  }
  return points;
}

}  // namespace fca
