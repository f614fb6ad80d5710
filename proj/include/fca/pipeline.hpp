#pragma once

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fca/data.hpp"
#include "fca/fca.hpp"
#include "fca/optim.hpp"

namespace fca {

enum class TaskLoss { kCrossEntropy, kMse };

struct TrainConfig {
  std::size_t epochs_per_stage = 3;
  std::size_t batch_size = 16;
  double lr_theta = 1e-3;  // from-scratch desk scale; no pretrained weights
  double lr_r = 2e-3;
  double lambda = 1e-3;
  std::uint64_t seed = 1;
  TaskLoss loss_kind = TaskLoss::kCrossEntropy;
  PoolingMode mode = PoolingMode::kAverage;
  std::size_t k_prime = 1;
  bool distance_regularization = false;

  void validate() const {
    if (lambda < 0 || lr_theta <= 0 || lr_r <= 0 || batch_size < 1) {
      throw UsageError("train config: lambda >= 0 and positive learning "
                       "rates/batch required");
    }
  }
};

struct StageReport {
  int stage = 0;
  std::vector<double> epoch_losses;  // mean objective per epoch
  double final_metric = 0.0;
  LengthSchedule schedule;                               // stage 2
  std::vector<std::vector<double>> retention_sum_trace;  // per epoch
  double retention_min = 1.0, retention_max = 0.0;       // across the stage
};

inline nlohmann::json stage_report_to_json(const StageReport& r) {
  nlohmann::json j{{"stage", r.stage},
                   {"epoch_losses", r.epoch_losses},
                   {"final_metric", r.final_metric}};
  if (r.stage == 2) {
    j["schedule"] = schedule_to_json(r.schedule);
    j["retention_sum_trace"] = r.retention_sum_trace;
    j["retention_min"] = r.retention_min;
    j["retention_max"] = r.retention_max;
  }
  return j;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ull * (a + 1) +
                    0x517cc1b727220a95ull * (b + 1);
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdull;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ull;
  x ^= x >> 33;
  return x;
}

// ---------------------------------------------------------------------------
// Objectives

/// Joint objective: task loss plus the layer-weighted retention total,
/// lambda * sum_l l * sum(R_l) with l counted from 1.
inline Tensor joint_loss(Tape* tape, const Tensor& task_loss,
                         const RetentionParams& retention, double lambda) {
  Tensor total = task_loss;
  for (std::size_t l = 0; l < retention.layers(); ++l) {
    Tensor layer_sum = sum_all(tape, retention.layer_values[l]);
    total = add(tape, total,
                scale(tape, layer_sum, lambda * static_cast<double>(l + 1)));
  }
  return total;
}

/// Joint objective plus a CLS-distance term against a frozen reference.
inline Tensor distance_regularized_loss(Tape* tape, const Tensor& task_loss,
                                        const RetentionParams& retention,
                                        double lambda, const Tensor& distance) {
  return add(tape, joint_loss(tape, task_loss, retention, lambda), distance);
}

// ---------------------------------------------------------------------------
// Forward dispatch

enum class ForwardMode { kStandard, kRetention, kSchedule, kPoolAll };

/// Everything one training/eval step needs to know about how to run the
/// model. Weights may be shared read-only across threads; each example gets
/// its own tape.
struct RunPlan {
  const EncoderModel* model = nullptr;
  ForwardMode mode = ForwardMode::kStandard;
  const RetentionParams* retention = nullptr;        // kRetention
  const LengthSchedule* schedule = nullptr;          // kSchedule
  const std::vector<std::size_t>* pool_lengths = nullptr;  // kPoolAll
  const EncoderModel* distance_reference = nullptr;  // optional regularizer
};

inline ForwardTrace run_forward(Tape* tape, const RunPlan& plan,
                                const std::vector<int>& ids) {
  const std::vector<int> pos = default_positions(ids.size());
  switch (plan.mode) {
    case ForwardMode::kStandard:
      return encoder_forward(tape, *plan.model, ids, pos);
    case ForwardMode::kRetention:
      return retention_forward(tape, *plan.model, ids, pos, *plan.retention);
    case ForwardMode::kSchedule:
      return fca_encoder_forward(tape, *plan.model, ids, pos, *plan.schedule);
    case ForwardMode::kPoolAll:
      return pool_all_forward(tape, *plan.model, ids, pos,
                              *plan.pool_lengths);
  }
  throw UsageError("run_forward: bad mode");
}

/// Task loss of one example. Multiple choice runs one forward per candidate
/// and softmaxes the per-choice logits; it requires num_classes == 1.
inline Tensor example_loss(Tape* tape, const RunPlan& plan, const Example& ex,
                           TaskLoss kind) {
  Tensor loss;
  if (ex.choices.size() == 1) {
    ForwardTrace t = run_forward(tape, plan, ex.choices[0]);
    if (kind == TaskLoss::kCrossEntropy) {
      loss = cross_entropy_logits(tape, t.logits,
                                  static_cast<std::size_t>(ex.label));
    } else {
      loss = mse_loss(tape, t.logits, {static_cast<double>(ex.label)});
    }
    if (plan.distance_reference) {
      RunPlan ref_plan;
      ref_plan.model = plan.distance_reference;
      ForwardTrace ref = run_forward(nullptr, ref_plan, ex.choices[0]);
      Tensor live_cls = gather_rows(tape, t.final_sequence.hidden, {0});
      Tensor ref_cls =
          scale(nullptr, gather_rows(nullptr, ref.final_sequence.hidden, {0}),
                -1.0);
      Tensor diff = add(tape, live_cls, ref_cls);
      Tensor dist =
          sqrt_scalar(tape, sum_all(tape, hadamard(tape, diff, diff)));
      loss = add(tape, loss, dist);
    }
  } else {
    if (plan.distance_reference) {
      throw UsageError("example_loss: distance regularization is only "
                       "supported for single-sequence tasks");
    }
    std::vector<Tensor> per_choice;
    for (const std::vector<int>& ids : ex.choices) {
      ForwardTrace t = run_forward(tape, plan, ids);
      if (t.logits.numel() != 1) {
        throw ShapeError("example_loss: multiple choice needs a single "
                         "logit per candidate");
      }
      per_choice.push_back(t.logits);
    }
    loss = cross_entropy_logits(tape, concat_cols(tape, per_choice),
                                static_cast<std::size_t>(ex.label));
  }
  return loss;
}

inline int predict(const RunPlan& plan, const Example& ex) {
  if (ex.choices.size() == 1) {
    ForwardTrace t = run_forward(nullptr, plan, ex.choices[0]);
    int best = 0;
    for (std::size_t c = 1; c < t.logits.numel(); ++c) {
      if (t.logits(c) > t.logits(best)) best = static_cast<int>(c);
    }
    return best;
  }
  int best = 0;
  double best_logit = 0.0;
  for (std::size_t c = 0; c < ex.choices.size(); ++c) {
    ForwardTrace t = run_forward(nullptr, plan, ex.choices[c]);
    const double v = t.logits(0);
    if (c == 0 || v > best_logit) {
      best = static_cast<int>(c);
      best_logit = v;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Metrics

inline double compute_metric(Metric metric, const std::vector<int>& predicted,
                             const std::vector<int>& expected) {
  if (predicted.size() != expected.size() || predicted.empty()) {
    throw ShapeError("compute_metric: prediction/label size mismatch");
  }
  const double n = static_cast<double>(predicted.size());
  double tp = 0, tn = 0, fp = 0, fn = 0, correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    correct += predicted[i] == expected[i];
    tp += predicted[i] == 1 && expected[i] == 1;
    tn += predicted[i] == 0 && expected[i] == 0;
    fp += predicted[i] == 1 && expected[i] == 0;
    fn += predicted[i] == 0 && expected[i] == 1;
  }
  switch (metric) {
    case Metric::kAccuracy:
      return correct / n;
    case Metric::kF1: {
      const double denom = 2 * tp + fp + fn;
      return denom == 0 ? 0.0 : 2 * tp / denom;
    }
    case Metric::kMatthews: {
      const double denom =
          std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
      return denom == 0 ? 0.0 : (tp * tn - fp * fn) / denom;
    }
  }
  throw UsageError("compute_metric: bad metric");
}

/// Dev-set evaluation against frozen weights; examples run in parallel.
inline double evaluate(const RunPlan& plan, const std::vector<Example>& data,
                       Metric metric) {
  std::vector<int> predicted(data.size()), expected(data.size());
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < data.size(); ++i) {
    try {
      predicted[i] = predict(plan, data[i]);
      expected[i] = data[i].label;
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw NumericError("evaluate: " + error);
  return compute_metric(metric, predicted, expected);
}

// ---------------------------------------------------------------------------
// The batch trainer

namespace detail {

/// One optimizer step over a batch. Per-example forward/backward runs in
/// parallel on private tapes; gradients merge into the shared parameters in
/// example order, so results do not depend on thread count.
inline double train_batch(const RunPlan& plan,
                          const std::vector<const Example*>& batch,
                          TaskLoss kind, std::vector<Tensor>& theta,
                          AdamState& opt_theta, RetentionParams* retention,
                          AdamState* opt_r, double lambda) {
  const std::size_t b = batch.size();
  std::vector<std::unique_ptr<Tape>> tapes(b);
  std::vector<double> losses(b, 0.0);
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t e = 0; e < b; ++e) {
    try {
      tapes[e] = std::make_unique<Tape>();
      Tensor loss = example_loss(tapes[e].get(), plan, *batch[e], kind);
      Tensor scaled =
          scale(tapes[e].get(), loss, 1.0 / static_cast<double>(b));
      tapes[e]->backward(scaled, /*publish=*/false);
      losses[e] = loss.value();
    } catch (const std::exception& ex) {
#pragma omp critical
      if (error.empty()) error = ex.what();
    }
  }
  if (!error.empty()) {
    throw NumericError("train_batch: " + error);
  }

  std::vector<Tensor> r_params;
  if (retention) r_params = retention->layer_values;
  for (std::size_t e = 0; e < b; ++e) {
    for (Tensor& p : theta) {
      if (const std::vector<double>* g = tapes[e]->find_grad(p)) {
        p.accumulate_grad(*g);
      }
    }
    for (Tensor& p : r_params) {
      if (const std::vector<double>* g = tapes[e]->find_grad(p)) {
        p.accumulate_grad(*g);
      }
    }
  }

  double objective =
      std::accumulate(losses.begin(), losses.end(), 0.0) / b;
  if (retention && lambda > 0.0) {
    Tape penalty_tape;
    Tensor penalty = joint_loss(&penalty_tape, Tensor::scalar(0.0),
                                *retention, lambda);
    penalty_tape.backward(penalty);  // publishes lambda * l into R grads
    objective += penalty.value();
  }
  if (!std::isfinite(objective)) {
    throw NumericError("train_batch: non-finite objective " +
                       std::to_string(objective));
  }

  adam_step(theta, opt_theta);
  for (Tensor& p : theta) p.zero_grad();
  if (retention && opt_r) {
    adam_step(r_params, *opt_r);
    for (Tensor& p : r_params) p.zero_grad();
    retention->clamp_to_unit_interval();
  }
  return objective;
}

}  // namespace detail

/// Epoch loop shared by every stage: seeded shuffle per epoch, batched
/// steps, loss curve and retention trace recorded into the report.
inline void train_core(const RunPlan& plan, const std::vector<Example>& data,
                       const TrainConfig& cfg, int stage_id,
                       RetentionParams* retention, StageReport& report) {
  cfg.validate();
  if (data.empty()) throw DataError("train: empty dataset");
  std::vector<Tensor> theta = plan.model->parameters();
  for (Tensor& p : theta) p.set_requires_grad(true);
  AdamState opt_theta = make_adam_state(theta, cfg.lr_theta);
  AdamState opt_r;
  if (retention) {
    for (Tensor& p : retention->layer_values) p.set_requires_grad(true);
    opt_r = make_adam_state(retention->layer_values, cfg.lr_r);
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
    std::mt19937_64 rng(mix_seed(cfg.seed, stage_id, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      std::vector<const Example*> batch;
      for (std::size_t i = start;
           i < std::min(order.size(), start + cfg.batch_size); ++i) {
        batch.push_back(&data[order[i]]);
      }
      epoch_loss += detail::train_batch(plan, batch, cfg.loss_kind, theta,
                                        opt_theta, retention,
                                        retention ? &opt_r : nullptr,
                                        cfg.lambda);
      ++batches;
      if (retention) {
        for (const Tensor& t : retention->layer_values) {
          for (double v : t.values()) {
            report.retention_min = std::min(report.retention_min, v);
            report.retention_max = std::max(report.retention_max, v);
          }
        }
      }
    }
    report.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
    if (retention) {
      report.retention_sum_trace.push_back(retention->layer_sums());
    }
  }
  for (Tensor& p : theta) {
    p.set_requires_grad(false);
    p.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// The three stages

/// Stage 1: plain fine-tuning of the encoder with the task loss.
inline StageReport stage1_finetune(EncoderModel& model,
                                   const std::vector<Example>& train,
                                   const std::vector<Example>& dev,
                                   const TaskSpec& task,
                                   const TrainConfig& cfg) {
  StageReport report;
  report.stage = 1;
  RunPlan plan;
  plan.model = &model;
  plan.mode = ForwardMode::kStandard;
  if (cfg.epochs_per_stage > 0) {
    train_core(plan, train, cfg, 1, nullptr, report);
  }
  report.final_metric = evaluate(plan, dev, task.metric);
  return report;
}

/// Stage 2: retention values riding on every MHA output, trained jointly
/// with the weights under the length-penalized objective; the schedule is
/// read off the sums at the end.
inline std::pair<RetentionParams, StageReport> stage2_learn_retention(
    EncoderModel& model, const std::vector<Example>& train,
    const std::vector<Example>& dev, const TaskSpec& task,
    const TrainConfig& cfg) {
  StageReport report;
  report.stage = 2;
  RetentionParams retention = RetentionParams::init_uniform(
      model.config.layers, model.config.max_len - 1,
      mix_seed(cfg.seed, 2, 9000));
  RunPlan plan;
  plan.model = &model;
  plan.mode = ForwardMode::kRetention;
  plan.retention = &retention;
  if (cfg.epochs_per_stage > 0) {
    train_core(plan, train, cfg, 2, &retention, report);
  }
  report.schedule = derive_schedule(retention, cfg.k_prime, cfg.mode);
  report.final_metric = evaluate(plan, dev, task.metric);
  return {std::move(retention), std::move(report)};
}

/// Stage 3: hard top-k hybrid forward under the frozen schedule, task loss
/// only.
inline StageReport stage3_retrain(EncoderModel& model,
                                  const LengthSchedule& schedule,
                                  const std::vector<Example>& train,
                                  const std::vector<Example>& dev,
                                  const TaskSpec& task,
                                  const TrainConfig& cfg) {
  schedule.validate();
  StageReport report;
  report.stage = 3;
  report.schedule = schedule;
  RunPlan plan;
  plan.model = &model;
  plan.mode = ForwardMode::kSchedule;
  plan.schedule = &schedule;
  if (cfg.epochs_per_stage > 0) {
    train_core(plan, train, cfg, 3, nullptr, report);
  }
  report.final_metric = evaluate(plan, dev, task.metric);
  return report;
}

}  // namespace fca
