#include <cmath>
#include <numbers>

#include "doctest.h"
#include "dynformer/autodiff.hpp"
#include "dynformer/cost.hpp"
#include "dynformer/error.hpp"
#include "dynformer/fft.hpp"
#include "test_helpers.hpp"

using namespace dynformer;
using dynformer::testing::max_grad_error;
using dynformer::testing::random_tensor;
using dynformer::testing::weighted_sum;

TEST_CASE("tensor construction validates sizes") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 1.5);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(t.reshaped({4}), DimensionError);
}

TEST_CASE("matmul hand cases") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = tape.constant(Tensor({2, 1}, {0, 1}));
  Var c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.value()[0] == 2);
  CHECK(c.value()[1] == 4);

  Var eye = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  CHECK(max_abs_diff(matmul(eye, a).value(), a.value()) == 0.0);
  CHECK_THROWS_AS(matmul(b, b), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
  std::mt19937_64 rng(1);
  const Tensor b = random_tensor({4, 2}, rng);
  const double err = max_grad_error(
      [&](Tape& t, Var a) { return sum(matmul(a, t.constant(b))); }, random_tensor({3, 4}, rng));
  CHECK(err < 1e-6);
  const Tensor a = random_tensor({3, 4}, rng);
  CHECK(max_grad_error([&](Tape& t, Var x) { return weighted_sum(t, matmul(t.constant(a), x)); },
                       random_tensor({4, 2}, rng)) < 1e-6);
}

TEST_CASE("hadamard identities and gradient") {
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({4, 4}, rng);
  Tape tape;
  Var va = tape.constant(a);
  CHECK(max_abs_diff(hadamard(va, tape.constant(Tensor({4, 4}, 1.0))).value(), a) == 0.0);
  CHECK(max_abs(hadamard(va, tape.constant(Tensor({4, 4}, 0.0))).value()) == 0.0);
  CHECK_THROWS_AS(hadamard(va, tape.constant(Tensor({4, 2}))), DimensionError);
  CHECK(max_grad_error([&](Tape& t, Var x) { return weighted_sum(t, hadamard(x, t.constant(a))); },
                       random_tensor({4, 4}, rng)) < 1e-6);
}

TEST_CASE("mean over axis") {
  Tape tape;
  Var x = tape.constant(Tensor({2, 2}, {1, 3, 5, 7}));
  Var m = mean_over_axis(x, 1);
  CHECK(m.shape() == Shape{2});
  CHECK(m.value()[0] == doctest::Approx(2.0));
  CHECK(m.value()[1] == doctest::Approx(6.0));
  Var c = mean_over_axis(tape.constant(Tensor({3, 4, 2}, 2.5)), 1);
  CHECK(c.shape() == Shape{3, 2});
  for (double v : c.value().data()) CHECK(v == doctest::Approx(2.5));
  CHECK_THROWS_AS(mean_over_axis(x, 2), DimensionError);

  std::mt19937_64 rng(3);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    CHECK(max_grad_error([&](Tape& t, Var v) { return weighted_sum(t, mean_over_axis(v, axis)); },
                         random_tensor({3, 4, 2}, rng)) < 1e-6);
  }
}

TEST_CASE("pointwise affine and gelu chain") {
  std::mt19937_64 rng(4);
  const Tensor w1 = random_tensor({3, 5}, rng), b1 = random_tensor({5}, rng);
  const Tensor w2 = random_tensor({5, 2}, rng), b2 = random_tensor({2}, rng);
  auto mlp = [&](Tape& t, Var x) {
    Var h = gelu(linear(x, t.constant(w1), t.constant(b1)));
    return linear(h, t.constant(w2), t.constant(b2));
  };
  CHECK(max_grad_error([&](Tape& t, Var x) { return weighted_sum(t, mlp(t, x)); },
                       random_tensor({2, 2, 3}, rng)) < 1e-5);

  Tape tape;
  Var x = tape.constant(random_tensor({2, 2, 3}, rng));
  Var zero = linear(gelu(linear(x, tape.constant(Tensor({3, 4})), tape.constant(Tensor({4})))),
                    tape.constant(Tensor({4, 3})), tape.constant(Tensor({3})));
  CHECK(max_abs(zero.value()) == 0.0);
  Var same = linear(x, tape.constant(Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1})));
  CHECK(max_abs_diff(same.value(), x.value()) == 0.0);
  CHECK_THROWS_AS(linear(x, tape.constant(Tensor({2, 3}))), DimensionError);
}

TEST_CASE("per-op gradients for remaining primitives") {
  std::mt19937_64 rng(5);
  const Tensor other = random_tensor({3, 4}, rng);
  CHECK(max_grad_error([](Tape& t, Var x) { return weighted_sum(t, softmax_last(x)); },
                       random_tensor({3, 4}, rng)) < 1e-5);
  CHECK(max_grad_error([](Tape& t, Var x) { return weighted_sum(t, transpose(x)); },
                       random_tensor({3, 4}, rng)) < 1e-5);
  CHECK(max_grad_error(
            [&](Tape& t, Var x) { return weighted_sum(t, sub(scale(x, 1.7), t.constant(other))); },
            random_tensor({3, 4}, rng)) < 1e-5);
  CHECK(max_grad_error(
            [&, sv = random_tensor({3}, rng, 1.0, 2.0)](Tape& t, Var x) {
              return weighted_sum(t, divide_rows(x, t.constant(sv)));
            },
            random_tensor({3, 4}, rng)) < 1e-5);
  CHECK(max_grad_error(
            [&](Tape& t, Var s) {
              return weighted_sum(t, divide_rows(t.constant(other), add(s, t.constant(Tensor({3}, 2.0)))));
            },
            random_tensor({3}, rng)) < 1e-5);
  CHECK(max_grad_error(
            [&](Tape& t, Var s) { return weighted_sum(t, scale_by(t.constant(other), s)); },
            Tensor({1}, {0.3})) < 1e-5);
  CHECK(max_grad_error(
            [&](Tape& t, Var x) {
              Var parts[] = {slice_last(x, 0, 1), slice_last(x, 1, 4)};
              Var rows[] = {select(concat_last(parts), 2), select(x, 0)};
              return weighted_sum(t, reshape(stack(rows), {8}));
            },
            random_tensor({3, 4}, rng)) < 1e-5);
  const Tensor truth = random_tensor({2, 3, 2}, rng);
  CHECK(max_grad_error([&](Tape&, Var x) { return relative_mse_loss(x, truth); },
                       random_tensor({2, 3, 2}, rng)) < 1e-5);
}

TEST_CASE("backward semantics") {
  Parameter p("p", Tensor({2, 3}, 0.5));
  Parameter unused("u", Tensor({2}, 1.0));
  {
    Tape tape;
    Var v = tape.param(p);
    tape.param(unused);
    tape.backward(sum(v));
    for (double g : p.grad().data()) CHECK(g == 1.0);
    for (double g : unused.grad().data()) CHECK(g == 0.0);
  }
  {
    Tape tape;
    Var v = tape.param(p);
    tape.backward(sum(v));
    for (double g : p.grad().data()) CHECK(g == 2.0);
  }
  p.zero_grad();
  {
    Tape tape;
    Var v = tape.param(p);
    tape.backward(scale(sum(gelu(v)), 0.0));
    for (double g : p.grad().data()) CHECK(g == 0.0);
  }
  CHECK(p.grad().shape() == p.value().shape());

  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(tape.backward(x), ValidationError);
}

TEST_CASE("backward visits nodes in strict reverse order") {
  Tape tape;
  Var x = tape.leaf(Tensor({3}, {1, 2, 3}));
  Var y = gelu(x);
  Var z = hadamard(y, x);
  Var loss = sum(z);
  tape.backward(loss);
  const auto& order = tape.last_backward_order();
  REQUIRE(order.size() == tape.size());
  for (std::size_t i = 0; i < order.size(); ++i) CHECK(order[i] == order.size() - 1 - i);
}

TEST_CASE("operations reject non-finite results") {
  Tape tape;
  Var x = tape.constant(Tensor({2}, {1.0, 0.0}));
  Var s = tape.constant(Tensor({2}, {0.0, 0.0}));
  CHECK_THROWS_AS(divide_rows(reshape(x, {2, 1}), s), NumericalError);
}

TEST_CASE("relative mse rejects zero truth sample") {
  Tape tape;
  Var x = tape.constant(Tensor({2, 2}, 1.0));
  try {
    relative_mse_loss(x, Tensor({2, 2}, {1.0, 1.0, 0.0, 0.0}));
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
}

TEST_CASE("mulacc scopes nest") {
  CostScope outer;
  count_mulacc(CostCategory::kPointwise, 5);
  {
    CostScope inner;
    count_mulacc(CostCategory::kAttentionCore, 7);
    CHECK(inner.tally().total() == 7);
  }
  CHECK(outer.tally()[CostCategory::kPointwise] == 5);
  CHECK(outer.tally()[CostCategory::kAttentionCore] == 7);
}

TEST_CASE("determinism of repeated op sequences") {
  auto run = [] {
    std::mt19937_64 rng(11);
    Tape tape;
    Var x = tape.constant(random_tensor({4, 6}, rng));
    Var w = tape.constant(random_tensor({6, 3}, rng));
    return softmax_last(gelu(matmul(x, w))).value();
  };
  const Tensor a = run(), b = run();
  CHECK(a.vec() == b.vec());
}
