#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fca/ops.hpp"
#include "fca/optim.hpp"
#include "fca/tape.hpp"
#include "oracles.hpp"

using fca::Tape;
using fca::Tensor;

TEST_CASE("backward: sum gives all-ones gradient") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss = fca::sum_all(&tape, x);
  tape.backward(loss);
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: half squared norm gives x back") {
  Tensor x({4}, {1.5, -2.0, 0.0, 3.25});
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss = fca::scale(&tape, fca::sum_all(&tape, fca::hadamard(&tape, x, x)), 0.5);
  tape.backward(loss);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK_THAT(x.grad()[i], Catch::Matchers::WithinAbs(x(i), 1e-15));
  }
}

TEST_CASE("backward guards: scalar loss, empty tape, double call") {
  Tensor x({2, 2}, {1, 2, 3, 4});
  x.set_requires_grad(true);

  Tape empty;
  CHECK_THROWS_AS(empty.backward(Tensor::scalar(1.0)), fca::NumericError);

  Tape tape;
  Tensor y = fca::scale(&tape, x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), fca::ShapeError);  // non-scalar

  Tensor loss = fca::sum_all(&tape, y);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), fca::NumericError);
  tape.reset();  // rearmed after reset
}

TEST_CASE("gradient accumulates across backward calls until zero_grad") {
  Tensor x({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    Tensor loss = fca::sum_all(&tape, x);
    tape.backward(loss);
  }
  CHECK(x.grad()[0] == 2.0);
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

namespace {

double check_op(const std::function<Tensor(Tape*, const std::vector<Tensor>&)>& op,
                std::vector<Tensor> leaves) {
  return oracle::finite_difference_max_err(
      leaves, [&](Tape* tape) { return op(tape, leaves); });
}

}  // namespace

TEST_CASE("finite differences agree per operation type") {
  std::mt19937_64 rng(21);

  SECTION("matmul chain") {
    std::vector<Tensor> leaves = {Tensor::randn({3, 4}, rng),
                                  Tensor::randn({4, 2}, rng)};
    double err = check_op(
        [](Tape* t, const std::vector<Tensor>& v) {
          return fca::sum_all(t, fca::matmul(t, v[0], v[1]));
        },
        leaves);
    CHECK(err < 1e-4);
  }

  SECTION("softmax through weighted readout") {
    std::vector<Tensor> leaves = {Tensor::randn({3, 5}, rng)};
    Tensor w = Tensor::randn({3, 5}, rng);
    double err = check_op(
        [w](Tape* t, const std::vector<Tensor>& v) {
          return fca::sum_all(t, fca::hadamard(t, fca::softmax_rows(t, v[0]), w));
        },
        leaves);
    CHECK(err < 1e-4);
  }

  SECTION("masked softmax") {
    std::vector<Tensor> leaves = {Tensor::randn({2, 4}, rng)};
    fca::ElementMask mask = {1, 1, 0, 1, 0, 1, 1, 1};
    Tensor w = Tensor::randn({2, 4}, rng);
    double err = check_op(
        [w, mask](Tape* t, const std::vector<Tensor>& v) {
          return fca::sum_all(
              t, fca::hadamard(t, fca::softmax_rows(t, v[0], &mask), w));
        },
        leaves);
    CHECK(err < 1e-4);
  }

  SECTION("gelu") {
    std::vector<Tensor> leaves = {Tensor::randn({2, 6}, rng)};
    double err = check_op(
        [](Tape* t, const std::vector<Tensor>& v) {
          return fca::sum_all(t, fca::gelu(t, v[0]));
        },
        leaves);
    CHECK(err < 1e-4);
  }

  SECTION("layer_norm with affine") {
    std::vector<Tensor> leaves = {Tensor::randn({3, 6}, rng),
                                  Tensor::randn({6}, rng),
                                  Tensor::randn({6}, rng)};
    Tensor w = Tensor::randn({3, 6}, rng);
    double err = check_op(
        [w](Tape* t, const std::vector<Tensor>& v) {
          return fca::sum_all(
              t, fca::hadamard(t, fca::layer_norm(t, v[0], v[1], v[2]), w));
        },
        leaves);
    CHECK(err < 1e-4);
  }

  SECTION("gather, concat, scale_rows, broadcast composition") {
    std::vector<Tensor> leaves = {Tensor::randn({4, 3}, rng),
                                  Tensor::randn({4}, rng),
                                  Tensor::randn({3}, rng)};
    Tensor w = Tensor::randn({5, 3}, rng);
    double err = check_op(
        [w](Tape* t, const std::vector<Tensor>& v) {
          Tensor scaled = fca::scale_rows(t, v[0], v[1]);
          Tensor top = fca::gather_rows(t, scaled, {0, 2, 2});
          Tensor bottom = fca::gather_rows(t, scaled, {3, 1});
          Tensor joined = fca::concat_rows(t, {top, bottom});
          Tensor shifted = fca::add_row_broadcast(t, joined, v[2]);
          return fca::sum_all(t, fca::hadamard(t, shifted, w));
        },
        leaves);
    CHECK(err < 1e-4);
  }

  SECTION("cross entropy with logits") {
    std::vector<Tensor> leaves = {Tensor::randn({4}, rng)};
    double err = check_op(
        [](Tape* t, const std::vector<Tensor>& v) {
          return fca::cross_entropy_logits(t, v[0], 2);
        },
        leaves);
    CHECK(err < 1e-4);
  }

  SECTION("mse loss") {
    std::vector<Tensor> leaves = {Tensor::randn({3}, rng)};
    double err = check_op(
        [](Tape* t, const std::vector<Tensor>& v) {
          return fca::mse_loss(t, v[0], {0.5, -1.0, 2.0});
        },
        leaves);
    CHECK(err < 1e-4);
  }

  SECTION("sqrt of squared norm") {
    std::vector<Tensor> leaves = {Tensor::randn({3}, rng)};
    double err = check_op(
        [](Tape* t, const std::vector<Tensor>& v) {
          return fca::sqrt_scalar(t, fca::sum_all(t, fca::hadamard(t, v[0], v[0])));
        },
        leaves);
    CHECK(err < 1e-4);
  }

  SECTION("transpose and reshape") {
    std::vector<Tensor> leaves = {Tensor::randn({3, 4}, rng)};
    Tensor w = Tensor::randn({4, 3}, rng);
    double err = check_op(
        [w](Tape* t, const std::vector<Tensor>& v) {
          Tensor tr = fca::transpose(t, v[0]);
          Tensor rs = fca::reshape(t, tr, {4, 3});
          return fca::sum_all(t, fca::hadamard(t, rs, w));
        },
        leaves);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("unpublished gradients stay inside the tape") {
  Tensor x({2}, {1.0, 4.0});
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss = fca::sum_all(&tape, x);
  tape.backward(loss, /*publish=*/false);
  CHECK_FALSE(x.has_grad());
  const std::vector<double>* g = tape.find_grad(x);
  REQUIRE(g != nullptr);
  CHECK((*g)[0] == 1.0);
}

TEST_CASE("adam: zero gradient leaves fresh parameters unchanged") {
  std::vector<Tensor> params = {Tensor({2}, {1.0, -2.0})};
  fca::AdamState st = fca::make_adam_state(params, 0.1);
  std::vector<double> zeros(2, 0.0);
  fca::adam_step(params, {&zeros}, st);
  CHECK(params[0](0) == 1.0);
  CHECK(params[0](1) == -2.0);
  CHECK(st.step_count == 1);
}

TEST_CASE("adam: first step matches the hand derivation") {
  // g = 1, lr = 0.1, defaults: m = 0.1, v = 0.001, mhat = 1, vhat = 1,
  // delta = lr * 1 / (1 + eps).
  std::vector<Tensor> params = {Tensor({1}, {0.0})};
  fca::AdamState st = fca::make_adam_state(params, 0.1);
  std::vector<double> g = {1.0};
  fca::adam_step(params, {&g}, st);
  const double expected = -0.1 * 1.0 / (1.0 + 1e-8);
  CHECK_THAT(params[0](0), Catch::Matchers::WithinAbs(expected, 1e-18));
}

TEST_CASE("adam: identical runs are bitwise identical") {
  auto run = [] {
    std::mt19937_64 rng(5);
    std::vector<Tensor> params = {Tensor::randn({8}, rng)};
    fca::AdamState st = fca::make_adam_state(params, 0.01);
    for (int step = 0; step < 25; ++step) {
      std::vector<double> g(8);
      for (auto& v : g) v = std::normal_distribution<double>(0, 1)(rng);
      fca::adam_step(params, {&g}, st);
    }
    return params[0];
  };
  Tensor a = run(), b = run();
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a(i) == b(i));
}

TEST_CASE("adam: shape mismatch is rejected") {
  std::vector<Tensor> params = {Tensor({2}, {0.0, 0.0})};
  fca::AdamState st = fca::make_adam_state(params, 0.1);
  std::vector<double> bad = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(fca::adam_step(params, {&bad}, st), fca::ShapeError);
}
