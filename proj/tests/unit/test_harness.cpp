#include <cmath>
#include <numbers>

#include "doctest.h"
#include "dynformer/error.hpp"
#include "dynformer/harness.hpp"
#include "test_helpers.hpp"

using namespace dynformer;
using dynformer::testing::random_tensor;

namespace {

// Travelling waves on an 8x8 periodic grid: frame t is a shifted copy of
// frame t - 1.
TrajectoryDataset wave_dataset(std::size_t n, std::size_t t_in = 2, std::size_t t_out = 2) {
  TrajectoryDataset d;
  d.benchmark = Benchmark::kNs;
  d.t_in = t_in;
  d.t_out = t_out;
  d.s1 = d.s2 = 8;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (std::size_t s = 0; s < n; ++s) {
    const double p = phase(rng), q = phase(rng);
    auto frame = [&](std::size_t t, std::size_t i, std::size_t j) {
      const double x = 2.0 * std::numbers::pi * static_cast<double>(i + t) / 8.0;
      const double y = 2.0 * std::numbers::pi * static_cast<double>(j) / 8.0;
      return 1.0 + std::sin(x + p) * std::cos(y + q);
    };
    TrajectorySample ts{Tensor({1, t_in, 8, 8}), Tensor({1, t_out, 8, 8})};
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        for (std::size_t t = 0; t < t_in; ++t) ts.input.at({0, t, i, j}) = frame(t, i, j);
        for (std::size_t t = 0; t < t_out; ++t) ts.target.at({0, t, i, j}) = frame(t_in + t, i, j);
      }
    d.samples.push_back(std::move(ts));
  }
  d.compute_extrema();
  return d;
}

ModelConfig toy_config(std::size_t d_in) {
  ModelConfig c;
  c.d_in = d_in;
  c.d_out = 1;
  c.d_n = 4;
  c.layers = 2;
  c.modes = {3, 3};
  c.heads = 2;
  return c;
}

TrainOptions quick(std::size_t epochs) {
  TrainOptions o;
  o.epochs = epochs;
  o.batch_size = 4;
  o.eval_workers = 1;
  return o;
}

Tensor shift_identity(const Tensor& w) {
  // Next frame = last frame of the window.
  const std::size_t t_in = w.extent(1), plane = w.extent(2) * w.extent(3);
  Tensor f({w.extent(0), 1, w.extent(2), w.extent(3)});
  for (std::size_t c = 0; c < w.extent(0); ++c)
    std::copy_n(w.data().begin() + (c * t_in + t_in - 1) * plane, plane, f.data().begin() + c * plane);
  return f;
}

}  // namespace

TEST_CASE("minmax normalization") {
  const NormStats s{{-2.0, 1.0}, {3.0, 5.0}};
  Tensor lo({2, 3, 4}), hi({2, 3, 4});
  for (std::size_t i = 0; i < 12; ++i) {
    lo[i] = -2.0, lo[12 + i] = 1.0;
    hi[i] = 3.0, hi[12 + i] = 5.0;
  }
  CHECK(max_abs(minmax_normalize(lo, s)) == 0.0);
  CHECK(max_abs_diff(minmax_normalize(hi, s), Tensor({2, 3, 4}, 1.0)) == 0.0);

  std::mt19937_64 rng(71);
  const Tensor u = random_tensor({2, 5, 6}, rng);
  CHECK(max_abs_diff(minmax_denormalize(minmax_normalize(u, s), s), u) < 1e-12);

  CHECK_THROWS_AS(minmax_normalize(u, NormStats{{1.0, 0.0}, {1.0, 2.0}}), ValidationError);
  CHECK_THROWS_AS(minmax_normalize(random_tensor({3, 2}, rng), s), DimensionError);
}

TEST_CASE("normalization statistics come from the training split") {
  TrajectoryDataset d = wave_dataset(4);
  for (double& v : d.samples[3].input.data()) v *= 10.0;
  const NormPair train_only = compute_norm_stats(d, {0, 1, 2});
  const NormPair all = compute_norm_stats(d, {0, 1, 2, 3});
  CHECK(train_only.input.u_max[0] < 2.0 + 1e-12);
  CHECK(all.input.u_max[0] > 10.0);
  CHECK(train_only.input == train_only.target);
  CHECK(train_only.input.checksum() != all.input.checksum());

  // Training data lands in [0, 1].
  for (std::size_t i : {0, 1, 2}) {
    const Tensor n = minmax_normalize(d.samples[i].input, train_only.input);
    for (double v : n.data()) CHECK((v >= 0.0 && v <= 1.0));
  }

  // Parameter-to-solution data keeps separate input and target statistics.
  d.benchmark = Benchmark::kDarcy;
  d.t_in = 1;
  for (auto& s : d.samples) {
    s.input = Tensor({1, 1, 8, 8}, 3.0);
    s.input[0] = 12.0;
    s.target = 0.01 * s.target;
  }
  const NormPair p = compute_norm_stats(d, {0, 1});
  CHECK(p.input.u_min[0] == 3.0);
  CHECK(p.input.u_max[0] == 12.0);
  CHECK(p.target.u_max[0] < 0.03);
}

TEST_CASE("relative mse values") {
  std::mt19937_64 rng(72);
  const Tensor truth = random_tensor({3, 4, 4}, rng);
  CHECK(relative_mse(truth, truth) == 0.0);
  CHECK(std::abs(relative_mse(Tensor(truth.shape()), truth) - 1.0) < 1e-12);
  CHECK(std::abs(relative_mse(2.0 * truth, truth) - 1.0) < 1e-12);

  // Whole-tensor form differs from the per-sample mean in general.
  Tensor uneven = truth;
  for (std::size_t i = 0; i < 16; ++i) uneven[i] *= 100.0;
  const Tensor pred = uneven + 0.1 * random_tensor(truth.shape(), rng);
  CHECK(relative_mse(pred, uneven, true) != doctest::Approx(relative_mse(pred, uneven, false)));

  Tensor zero = truth;
  for (std::size_t i = 16; i < 32; ++i) zero[i] = 0.0;
  try {
    relative_mse(truth, zero);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("sample 1") != std::string::npos);
  }
  CHECK_THROWS_AS(relative_mse(truth, random_tensor({3, 16}, rng)), DimensionError);
}

TEST_CASE("log min-max score") {
  CHECK(log_minmax_score(1e-4, 1e-4, 1e-2) == 100.0);
  CHECK(log_minmax_score(1e-2, 1e-4, 1e-2) == 0.0);
  CHECK(std::abs(log_minmax_score(std::sqrt(1e-4 * 1e-2), 1e-4, 1e-2) - 50.0) < 1e-12);
  CHECK(log_minmax_score(2e-4, 1e-4, 1e-2) > log_minmax_score(3e-4, 1e-4, 1e-2));
  CHECK_THROWS_AS(log_minmax_score(1e-5, 1e-4, 1e-2), ValidationError);
  CHECK_THROWS_AS(log_minmax_score(0.0, 0.0, 1e-2), ValidationError);
  CHECK_THROWS_AS(log_minmax_score(1e-3, 1e-3, 1e-3), ValidationError);

  const std::vector<double> s = log_minmax_scores({1e-4, 1e-2});
  CHECK(s == std::vector<double>{100.0, 0.0});
  CHECK_THROWS_AS(log_minmax_scores({1e-3}), ValidationError);
  CHECK_THROWS_AS(log_minmax_scores({1e-3, 1e-3}), ValidationError);
}

TEST_CASE("step learning-rate schedule") {
  for (std::size_t e = 0; e < 7; ++e) CHECK(steplr(1e-3, 0.97, 7, e) == 1e-3);
  CHECK(std::abs(steplr(1e-3, 0.97, 7, 7) - 9.7e-4) < 1e-18);
  CHECK(std::abs(steplr(1e-3, 0.97, 7, 20) - 1e-3 * 0.97 * 0.97) < 1e-18);
  for (std::size_t e = 1; e < 50; ++e) {
    if (e % 7 != 0) CHECK(steplr(1e-3, 0.97, 7, e) == steplr(1e-3, 0.97, 7, e - 1));
  }
  CHECK_THROWS_AS(steplr(1e-3, 0.97, 0, 1), ValidationError);
}

TEST_CASE("AdamW update") {
  std::mt19937_64 rng(73);
  std::deque<Parameter> params;
  params.emplace_back("a", random_tensor({3, 2}, rng));
  params.emplace_back("b", random_tensor({4}, rng));
  const Tensor a0 = params[0].value(), b0 = params[1].value();

  SUBCASE("zero gradient and zero decay leave parameters unchanged") {
    AdamW opt({.lr = 1e-3, .weight_decay = 0.0});
    for (int i = 0; i < 3; ++i) opt.step(params, 1e-2);
    CHECK(params[0].value().vec() == a0.vec());
    CHECK(params[1].value().vec() == b0.vec());
  }
  SUBCASE("first two steps match the closed form") {
    const AdamWConfig cfg{.lr = 1e-3, .weight_decay = 0.1};
    AdamW opt(cfg);
    const Tensor g1 = random_tensor({4}, rng), g2 = random_tensor({4}, rng);
    params[1].mutable_grad() = g1;
    opt.step(params, 0.05);
    params[1].mutable_grad() = g2;
    opt.step(params, 0.05);
    for (std::size_t i = 0; i < 4; ++i) {
      double w = b0[i];
      w *= 1.0 - 0.05 * 0.1;
      w -= 0.05 * g1[i] / (std::abs(g1[i]) + 1e-8);
      w *= 1.0 - 0.05 * 0.1;
      const double m = (0.9 * 0.1 * g1[i] + 0.1 * g2[i]) / (1.0 - 0.81);
      const double v = (0.999 * 0.001 * g1[i] * g1[i] + 0.001 * g2[i] * g2[i]) / (1.0 - 0.999 * 0.999);
      w -= 0.05 * m / (std::sqrt(v) + 1e-8);
      CHECK(params[1].value()[i] == doctest::Approx(w).epsilon(1e-12));
    }
    // Pure decay on a zero-gradient parameter.
    CHECK(params[0].value()[0] == doctest::Approx(a0[0] * 0.995 * 0.995).epsilon(1e-14));
  }
  SUBCASE("state mismatch") {
    AdamW opt;
    opt.step(params, 1e-3);
    params.emplace_back("c", Tensor({2}));
    CHECK_THROWS_AS(opt.step(params, 1e-3), ValidationError);
  }
}

TEST_CASE("window layout round trip") {
  std::mt19937_64 rng(74);
  const Tensor w = random_tensor({2, 3, 4, 5}, rng);
  const Tensor m = window_to_model(w);
  CHECK(m.shape() == Shape{4, 5, 6});
  CHECK(m.at({1, 2, 1 * 3 + 2}) == w.at({1, 2, 1, 2}));
  const Tensor frame = random_tensor({4, 5, 2}, rng);
  CHECK(model_to_frame(frame, 2).at({1, 0, 3, 4}) == frame.at({3, 4, 1}));
}

TEST_CASE("autoregressive rollout") {
  std::mt19937_64 rng(75);
  const Tensor w = random_tensor({1, 3, 4, 4}, rng);

  SUBCASE("identity model continues the last frame") {
    const Tensor r = rollout_autoregressive(shift_identity, w, 5);
    CHECK(r.shape() == Shape{1, 5, 4, 4});
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t i = 0; i < 16; ++i) CHECK(r[t * 16 + i] == w[2 * 16 + i]);
  }
  SUBCASE("a single step is one call") {
    int calls = 0;
    const StepFn f = [&](const Tensor& x) {
      ++calls;
      return 2.0 * shift_identity(x);
    };
    const Tensor r = rollout_autoregressive(f, w, 1);
    CHECK(calls == 1);
    CHECK(max_abs_diff(r, 2.0 * shift_identity(w)) == 0.0);
  }
  SUBCASE("rollouts compose") {
    DynFormer model(toy_config(3), 9);
    const NormPair norm{{{-4.0}, {4.0}}, {{-4.0}, {4.0}}};
    const StepFn step = model_step(model, norm);
    const Tensor full = rollout_autoregressive(step, w, 5);
    const Tensor head = rollout_autoregressive(step, w, 2);
    // Advance the window by the first two predictions.
    Tensor w2({1, 3, 4, 4});
    std::copy_n(w.data().begin() + 32, 16, w2.data().begin());
    std::copy_n(head.data().begin(), 32, w2.data().begin() + 16);
    const Tensor tail = rollout_autoregressive(step, w2, 3);
    for (std::size_t i = 0; i < 48; ++i) CHECK(full[32 + i] == tail[i]);
  }
  SUBCASE("one-dimensional window shape") {
    const Tensor ks = random_tensor({1, 10, 256, 1}, rng);
    CHECK(rollout_autoregressive(shift_identity, ks, 10, Benchmark::kKs).shape() ==
          Shape{1, 10, 256, 1});
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(rollout_autoregressive(shift_identity, w, 0), ValidationError);
    CHECK_THROWS_AS(rollout_autoregressive(shift_identity, w, 2, Benchmark::kDarcy), ValidationError);
    CHECK(rollout_autoregressive(shift_identity, w, 1, Benchmark::kDarcy).extent(1) == 1);
  }
}

TEST_CASE("evaluation equals the persistence baseline for the identity step") {
  const TrajectoryDataset d = wave_dataset(3, 2, 3);
  const std::vector<double> eps = evaluate_per_sample(shift_identity, d, {0, 1, 2}, 2);
  for (std::size_t s = 0; s < 3; ++s) {
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
          const double truth = d.samples[s].target.at({0, t, i, j});
          const double last = d.samples[s].input.at({0, 1, i, j});
          num += (last - truth) * (last - truth);
          den += truth * truth;
        }
    CHECK(eps[s] == doctest::Approx(num / den).epsilon(1e-13));
  }
  CHECK(evaluate(shift_identity, d, {0, 1, 2}, 1) ==
        doctest::Approx((eps[0] + eps[1] + eps[2]) / 3.0).epsilon(1e-15));
}

TEST_CASE("persistence step repeats the last frame") {
  const TrajectoryDataset d = wave_dataset(2, 3, 2);
  const Tensor& w = d.samples[1].input;
  const Tensor next = persistence_step()(w);
  REQUIRE(next.shape() == Shape{1, 1, 8, 8});
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) CHECK(next.at({0, 0, i, j}) == w.at({0, 2, i, j}));
  const std::vector<double> a = evaluate_per_sample(persistence_step(), d, {0, 1}, 1);
  const std::vector<double> b = evaluate_per_sample(shift_identity, d, {0, 1}, 1);
  CHECK(a == b);
  CHECK_THROWS_AS(persistence_step()(Tensor({2, 3})), DimensionError);
}

TEST_CASE("training loop") {
  const TrajectoryDataset d = wave_dataset(10);
  const Split split = make_split(10, 8, 2);

  SUBCASE("loss decreases and records are complete") {
    DynFormer model(toy_config(2), 1);
    TrainOptions o = quick(6);
    o.optimizer.lr = 1e-2;
    const TrainResult r = train(model, d, split, o);
    REQUIRE(r.records.size() == 6);
    for (std::size_t e = 0; e < 6; ++e) {
      CHECK(r.records[e].epoch == e + 1);
      CHECK(r.records[e].test_eps >= 0.0);
      CHECK(r.records[e].params == model.parameter_count());
      CHECK(r.records[e].mulacc > 0);
    }
    CHECK(r.records.back().train_loss < r.records.front().train_loss);
  }
  SUBCASE("zero learning rate freezes the test error") {
    DynFormer model(toy_config(2), 1);
    TrainOptions o = quick(3);
    o.optimizer.lr = 0.0;
    const TrainResult r = train(model, d, split, o);
    CHECK(r.records[0].test_eps == r.records[1].test_eps);
    CHECK(r.records[1].test_eps == r.records[2].test_eps);
  }
  SUBCASE("determinism and seed sensitivity") {
    auto run = [&](std::uint64_t seed) {
      DynFormer model(toy_config(2), seed);
      TrainOptions o = quick(3);
      o.seed = seed;
      return train(model, d, split, o).records;
    };
    const auto a = run(123), b = run(123), c = run(456);
    for (std::size_t e = 0; e < 3; ++e) {
      CHECK(a[e].train_loss == b[e].train_loss);
      CHECK(a[e].test_eps == b[e].test_eps);
      CHECK(a[e].train_loss != c[e].train_loss);
      CHECK(std::isfinite(c[e].train_loss));
    }
  }
  SUBCASE("early stop") {
    DynFormer model(toy_config(2), 1);
    const TrainResult r = train(model, d, split, quick(10), {},
                                [](const std::vector<TrainRecord>& recs) { return recs.size() == 2; });
    CHECK(r.records.size() == 2);
  }
  SUBCASE("divergence is reported with its position") {
    DynFormer model(toy_config(2), 1);
    for (double& v : model.parameter("lift.w").mutable_value().data()) v = 1e300;
    try {
      train(model, d, split, quick(2));
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("epoch 1, batch 1") != std::string::npos);
    }
  }
  SUBCASE("shape mismatch") {
    DynFormer model(toy_config(3), 1);
    CHECK_THROWS_AS(train(model, d, split, quick(1)), ValidationError);
    CHECK_THROWS_AS(make_split(10, 8, 3), ValidationError);
  }
}

TEST_CASE("cost accounting") {
  ModelConfig c = toy_config(1);
  c.d_n = 8;
  c.heads = 2;
  const CostReport small = cost_account(c, 16, 16);
  CHECK(small.params == DynFormer(c, 3).parameter_count());
  CHECK(small.mulacc.total() > 0);

  // Pointwise MLP weights grow quadratically with width.
  auto mlp_params = [](const ModelConfig& cfg) {
    DynFormer m(cfg, 0);
    std::size_t n = 0;
    for (const Parameter& p : m.parameters()) {
      const std::string& name = p.name();
      if (name.find("local_") != std::string::npos || name.find("psi_") != std::string::npos) n += p.size();
    }
    return static_cast<double>(n);
  };
  ModelConfig wide = c;
  wide.d_n = 16;
  const double ratio = mlp_params(wide) / mlp_params(c);
  CHECK(ratio > 3.6);
  CHECK(ratio < 4.0);

  // Kronecker attention core cost grows as N^3.
  const double k16 = static_cast<double>(cost_account(c, 16, 16).mulacc[CostCategory::kAttentionCore]);
  const double k32 = static_cast<double>(cost_account(c, 32, 32).mulacc[CostCategory::kAttentionCore]);
  CHECK(k32 / k16 >= 6.4);
  CHECK(k32 / k16 <= 9.6);
  c.ablation.attention = AttentionKind::kClassical;
  const double c8 = static_cast<double>(cost_account(c, 8, 8).mulacc[CostCategory::kAttentionCore]);
  const double c16 = static_cast<double>(cost_account(c, 16, 16).mulacc[CostCategory::kAttentionCore]);
  CHECK(c16 / c8 >= 12.8);
  CHECK(c16 / c8 <= 19.2);
}
