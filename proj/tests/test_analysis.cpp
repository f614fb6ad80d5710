#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "fca/analysis.hpp"
#include "oracles.hpp"

using fca::EncoderConfig;
using fca::EncoderModel;
using fca::Example;
using fca::FlopsReport;
using fca::LengthSchedule;
using fca::Tensor;

namespace {

EncoderConfig bert_base() {
  EncoderConfig cfg;
  cfg.layers = 12;
  cfg.heads = 12;
  cfg.hidden = 768;
  cfg.ffn_inner = 3072;
  cfg.vocab_size = 30522;
  cfg.max_len = 512;
  cfg.num_classes = 2;
  return cfg;
}

LengthSchedule qqp_schedule() {
  LengthSchedule s;
  s.fine_counts = {85, 78, 73, 69, 61, 57, 54, 52, 46, 41, 35, 35};
  s.k_prime = 2;
  return s;
}

EncoderConfig toy_model_config() {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.hidden = 8;
  cfg.ffn_inner = 16;
  cfg.vocab_size = 12;
  cfg.max_len = 8;
  cfg.num_classes = 2;
  return cfg;
}

std::vector<Example> toy_data(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.label = static_cast<int>(rng() % 2);
    std::vector<int> ids = {fca::kClsId, ex.label == 0 ? 5 : 6};
    for (int j = 0; j < 4; ++j) ids.push_back(7 + static_cast<int>(rng() % 5));
    ids.push_back(fca::kSepId);
    ex.choices.push_back(ids);
    out.push_back(ex);
  }
  return out;
}

}  // namespace

TEST_CASE("hand count on a one-layer micro geometry") {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.hidden = 4;
  cfg.ffn_inner = 8;
  cfg.vocab_size = 8;
  cfg.max_len = 4;
  cfg.num_classes = 2;

  // Independent arithmetic for n = 2 under the documented convention:
  // projections 6*n*d^2, output 2*n*d^2, ffn 4*n*d*dff,
  // elementwise 5*(h*n^2 + 2*n*d + n*dff).
  const double raw = 6 * 2 * 16 + 2 * 2 * 16 + 4 * 2 * 4 * 8 +
                     5 * (1 * 4 + 2 * 2 * 4 + 2 * 8);
  // Same formula applied to the calibration anchor.
  const double d = 768, ff = 3072, h = 12, n = 128;
  const double raw_ref_layer =
      6 * n * d * d + 2 * n * d * d + 4 * n * d * ff +
      5 * (h * n * n + 2 * n * d + n * ff);
  const double scale = 2.6e9 / (12 * raw_ref_layer);

  FlopsReport report = fca::count_flops_lengths(cfg, {2});
  CHECK_THAT(report.total,
             Catch::Matchers::WithinRel(raw * scale, 1e-12));

  double sum = 0.0;
  for (const auto& b : report.breakdown) {
    CHECK(b.flops >= 0.0);
    sum += b.flops;
  }
  CHECK_THAT(report.total, Catch::Matchers::WithinRel(sum, 1e-12));
}

TEST_CASE("reference geometry reproduces the published totals and ratios") {
  EncoderConfig cfg = bert_base();
  const std::vector<std::size_t> lengths = {64, 128, 256, 512};
  const std::vector<double> published = {1.3e9, 2.6e9, 5.1e9, 10.2e9};
  std::vector<double> totals;
  for (std::size_t n : lengths) {
    totals.push_back(fca::count_flops_full(cfg, n).total);
  }
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::fabs(totals[i] - published[i]) / published[i] < 0.05);
  }
  const std::vector<double> expected_ratio = {1, 2, 4, 8};
  for (std::size_t i = 1; i < 4; ++i) {
    const double r = totals[i] / totals[0];
    CHECK(std::fabs(r - expected_ratio[i]) / expected_ratio[i] < 0.02);
  }
}

TEST_CASE("published reduced-length schedule speeds up about 2.2x") {
  EncoderConfig cfg = bert_base();
  FlopsReport fca_report = fca::count_flops(cfg, qqp_schedule());
  FlopsReport full = fca::count_flops_full(cfg, 128);
  const double speedup = fca::apply_speedup(fca_report, full);
  CHECK(speedup >= 1.9);
  CHECK(speedup <= 2.5);
  CHECK(fca_report.speedup_vs_reference == speedup);
}

TEST_CASE("flops are strictly monotone in every fine count") {
  EncoderConfig cfg = bert_base();
  LengthSchedule base = qqp_schedule();
  const double base_total = fca::count_flops(cfg, base).total;
  for (std::size_t l = 0; l < base.fine_counts.size(); ++l) {
    LengthSchedule bumped = base;
    bumped.fine_counts[l] += 1;
    // keep it a valid monotone schedule
    for (std::size_t i = 0; i < l; ++i) {
      bumped.fine_counts[i] =
          std::max(bumped.fine_counts[i], bumped.fine_counts[l]);
    }
    CHECK(fca::count_flops(cfg, bumped).total > base_total);
  }
}

TEST_CASE("full-length cost has no coarse-unit dependence") {
  EncoderConfig cfg = bert_base();
  const double a = fca::count_flops_full(cfg, 128).total;
  const double b = fca::count_flops_full(cfg, 128).total;
  CHECK(a == b);  // no k' anywhere in the full-length path
}

TEST_CASE("schedule token totals") {
  CHECK(fca::schedule_token_total(qqp_schedule()) == 686);
  CHECK(fca::schedule_token_total(std::vector<std::size_t>(12, 128)) == 1536);

  LengthSchedule zero;
  zero.fine_counts = {};
  CHECK(fca::schedule_token_total(zero) == 0);

  // linearity
  std::mt19937_64 rng(71);
  std::vector<std::size_t> s1(6), s2(6), sum(6);
  for (std::size_t i = 0; i < 6; ++i) {
    s1[i] = rng() % 100;
    s2[i] = rng() % 100;
    sum[i] = s1[i] + s2[i];
  }
  CHECK(fca::schedule_token_total(sum) ==
        fca::schedule_token_total(s1) + fca::schedule_token_total(s2));

  CHECK_THAT(fca::token_total_reduction(qqp_schedule(), 128),
             Catch::Matchers::WithinAbs(1.0 - 686.0 / 1536.0, 1e-12));
}

TEST_CASE("cls_distance: zero on identical models, exact offset response") {
  EncoderConfig cfg = toy_model_config();
  EncoderModel m = EncoderModel::init(cfg, 81);
  std::vector<Example> data = toy_data(9, 82);

  fca::ModelRun a{&m, nullptr};
  CHECK(fca::cls_distance(a, a, data) == 0.0);

  // Shifting the final layer-norm bias moves every CLS coordinate by delta.
  const double delta = 0.375;
  EncoderModel shifted = m.deep_clone();
  shifted.layers[1].ln2_bias(2) += delta;
  fca::ModelRun b{&shifted, nullptr};
  CHECK_THAT(fca::cls_distance(a, b, data),
             Catch::Matchers::WithinAbs(9 * delta, 1e-9));
}

TEST_CASE("cls_distance agrees with a per-instance loop oracle") {
  EncoderConfig cfg = toy_model_config();
  EncoderModel m1 = EncoderModel::init(cfg, 83);
  EncoderModel m2 = EncoderModel::init(cfg, 84);
  std::vector<Example> data = toy_data(7, 85);

  double want = 0.0;
  for (const Example& ex : data) {
    fca::ForwardTrace t1 = fca::encoder_forward(
        nullptr, m1, ex.choices[0],
        fca::default_positions(ex.choices[0].size()));
    fca::ForwardTrace t2 = fca::encoder_forward(
        nullptr, m2, ex.choices[0],
        fca::default_positions(ex.choices[0].size()));
    double sq = 0.0;
    for (std::size_t j = 0; j < cfg.hidden; ++j) {
      const double diff =
          t1.final_sequence.hidden(0, j) - t2.final_sequence.hidden(0, j);
      sq += diff * diff;
    }
    want += std::sqrt(sq);
  }
  CHECK_THAT(fca::cls_distance({&m1, nullptr}, {&m2, nullptr}, data),
             Catch::Matchers::WithinAbs(want, 1e-9));
}

TEST_CASE("cls_distance behaves like a metric on random triples") {
  EncoderConfig cfg = toy_model_config();
  EncoderModel a = EncoderModel::init(cfg, 86);
  EncoderModel b = EncoderModel::init(cfg, 87);
  EncoderModel c = EncoderModel::init(cfg, 88);
  std::vector<Example> data = toy_data(5, 89);

  const double ab = fca::cls_distance({&a, nullptr}, {&b, nullptr}, data);
  const double ba = fca::cls_distance({&b, nullptr}, {&a, nullptr}, data);
  const double ac = fca::cls_distance({&a, nullptr}, {&c, nullptr}, data);
  const double bc = fca::cls_distance({&b, nullptr}, {&c, nullptr}, data);
  CHECK_THAT(ab, Catch::Matchers::WithinAbs(ba, 1e-12));
  CHECK(ab > 0.0);
  CHECK(ac <= ab + bc + 1e-9);

  EncoderConfig wide = cfg;
  wide.hidden = 16;
  wide.ffn_inner = 32;
  EncoderModel w = EncoderModel::init(wide, 90);
  CHECK_THROWS_AS(fca::cls_distance({&a, nullptr}, {&w, nullptr}, data),
                  fca::ShapeError);
}

TEST_CASE("prune baseline degenerates to the standard encoder at full k") {
  EncoderConfig cfg = toy_model_config();
  EncoderModel m = EncoderModel::init(cfg, 91);
  std::vector<Example> data = toy_data(6, 92);

  LengthSchedule full = LengthSchedule::full_length(cfg.layers, cfg.max_len);
  full.k_prime = 0;
  for (const Example& ex : data) {
    fca::ForwardTrace std_t = fca::encoder_forward(
        nullptr, m, ex.choices[0],
        fca::default_positions(ex.choices[0].size()));
    fca::ForwardTrace fca_t = fca::fca_encoder_forward(
        nullptr, m, ex.choices[0],
        fca::default_positions(ex.choices[0].size()), full);
    for (std::size_t i = 0; i < std_t.logits.numel(); ++i) {
      CHECK_THAT(fca_t.logits(i),
                 Catch::Matchers::WithinAbs(std_t.logits(i), 1e-9));
    }
  }
}

TEST_CASE("pool lengths match the schedule layer for layer") {
  LengthSchedule s = qqp_schedule();
  std::vector<std::size_t> lengths = fca::pool_lengths_matching(s);
  REQUIRE(lengths.size() == s.fine_counts.size());
  for (std::size_t l = 0; l < lengths.size(); ++l) {
    CHECK(lengths[l] == s.fine_counts[l] + s.k_prime);
  }
}

TEST_CASE("sweep: flops shrink as lambda grows on the toy task") {
  EncoderConfig cfg = toy_model_config();
  std::vector<Example> train = toy_data(64, 93);
  std::vector<Example> dev = toy_data(24, 94);
  fca::TaskSpec task;
  task.max_len = 8;
  task.metric = fca::Metric::kAccuracy;

  const std::vector<double> lambdas = {0.0, 0.3, 3.0};
  std::vector<double> mean_flops(lambdas.size(), 0.0);
  const int seeds = 3;
  for (int s = 0; s < seeds; ++s) {
    fca::TrainConfig tc;
    tc.epochs_per_stage = 2;
    tc.batch_size = 8;
    tc.lr_theta = 2e-3;
    tc.lr_r = 0.05;
    tc.seed = 200 + s;
    tc.k_prime = 1;
    fca::SweepResult result =
        fca::tradeoff_sweep(cfg, lambdas, train, dev, task, tc);
    REQUIRE(result.points.size() == lambdas.size());
    REQUIRE(result.failures.empty());
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      CHECK(result.points[i].lambda == lambdas[i]);
      CHECK(result.points[i].flops > 0.0);
      mean_flops[i] += result.points[i].flops / seeds;
    }
  }
  CHECK(mean_flops[0] >= mean_flops[1]);
  CHECK(mean_flops[1] >= mean_flops[2]);

  CHECK_THROWS_AS(
      fca::tradeoff_sweep(cfg, {0.1}, train, dev, task, fca::TrainConfig{}),
      fca::UsageError);
}

TEST_CASE("tradeoff CSV round-trips") {
  std::vector<fca::TradeoffPoint> points;
  std::mt19937_64 rng(95);
  for (int i = 0; i < 5; ++i) {
    fca::TradeoffPoint p;
    p.lambda = std::uniform_real_distribution<double>(0, 0.01)(rng);
    p.flops = std::uniform_real_distribution<double>(1e6, 1e9)(rng);
    p.metric = std::uniform_real_distribution<double>(0, 1)(rng);
    points.push_back(p);
  }
  std::stringstream ss;
  fca::write_tradeoff_csv(ss, points);
  std::vector<fca::TradeoffPoint> parsed = fca::parse_tradeoff_csv(ss);
  REQUIRE(parsed.size() == points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    CHECK(parsed[i].lambda == points[i].lambda);
    CHECK(parsed[i].flops == points[i].flops);
    CHECK(parsed[i].metric == points[i].metric);
  }
}

TEST_CASE("flops CSV carries every layer and component") {
  EncoderConfig cfg = toy_model_config();
  FlopsReport report = fca::count_flops_full(cfg, 6);
  std::stringstream ss;
  fca::write_flops_csv(ss, report);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "layer,component,flops");
  std::size_t rows = 0;
  while (std::getline(ss, line)) rows += !line.empty();
  CHECK(rows == cfg.layers * 6);
}
