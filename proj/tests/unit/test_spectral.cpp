#include <cmath>
#include <numbers>

#include "doctest.h"
#include "dynformer/error.hpp"
#include "dynformer/fft.hpp"
#include "dynformer/spectral.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace dynformer;
using dynformer::testing::max_grad_error;
using dynformer::testing::random_tensor;
using dynformer::testing::weighted_sum;

namespace {

Tensor fft_of(const Tensor& u) {
  Tape tape;
  return fft2(tape.constant(u)).value();
}

Tensor real_roundtrip(const Tensor& u) {
  Tape tape;
  return real_part(ifft2(fft2(tape.constant(u)))).value();
}

// Largest spectral magnitude at any index outside the retained block.
double excluded_energy(const Tensor& u, const ModeSet& m) {
  const Tensor spec = fft_of(u);
  const std::size_t n1 = u.extent(1), n2 = u.extent(2), c = u.extent(3);
  double worst = 0.0;
  for (std::size_t b = 0; b < u.extent(0); ++b)
    for (std::size_t i = 0; i < n1; ++i)
      for (std::size_t j = 0; j < n2; ++j) {
        if (m.retains(i, j, n1, n2)) continue;
        for (std::size_t ch = 0; ch < c; ++ch)
          worst = std::max(worst, std::abs(spec.complex_at(((b * n1 + i) * n2 + j) * c + ch)));
      }
  return worst;
}

}  // namespace

TEST_CASE("fft2 of constant field is pure DC") {
  const Tensor u({1, 4, 6, 1}, 2.0);
  const Tensor s = fft_of(u);
  CHECK(s.at({0, 0, 0, 0, 0}) == doctest::Approx(2.0 * 24));
  for (std::size_t p = 1; p < 24; ++p) CHECK(std::abs(s.complex_at(p)) < 1e-12);
}

TEST_CASE("fft2 of a single cosine") {
  const std::size_t n = 16;
  Tensor u({1, n, 1, 1});
  for (std::size_t i = 0; i < n; ++i) u[i] = std::cos(2 * std::numbers::pi * i / n);
  const Tensor s = fft_of(u);
  for (std::size_t k = 0; k < n; ++k) {
    const double mag = std::abs(s.complex_at(k));
    if (k == 1 || k == n - 1) {
      CHECK(mag == doctest::Approx(n / 2.0));
    } else {
      CHECK(mag < 1e-12);
    }
  }
}

TEST_CASE("fft2 agrees with naive DFT and round-trips") {
  std::mt19937_64 rng(21);
  const Tensor u = random_tensor({2, 8, 8, 3}, rng);
  CHECK(max_abs_diff(fft_of(u), oracle::naive_dft2(u)) < 1e-10);
  CHECK(max_abs_diff(real_roundtrip(u), u) < 1e-12 * max_abs(u) + 1e-15);
}

TEST_CASE("fft2 is linear") {
  std::mt19937_64 rng(22);
  const Tensor x = random_tensor({1, 8, 8, 2}, rng), y = random_tensor({1, 8, 8, 2}, rng);
  const Tensor lhs = fft_of(0.3 * x + (-1.7) * y);
  const Tensor rhs = 0.3 * fft_of(x) + (-1.7) * fft_of(y);
  CHECK(max_abs_diff(lhs, rhs) < 1e-12 * max_abs(rhs));
}

TEST_CASE("spectral op gradients") {
  std::mt19937_64 rng(23);
  const ModeSet m{4, 3};
  CHECK(max_grad_error([](Tape& t, Var x) { return weighted_sum(t, fft2(x)); },
                       random_tensor({1, 6, 5, 2}, rng)) < 1e-5);
  CHECK(max_grad_error([](Tape& t, Var z) { return weighted_sum(t, ifft2(z)); },
                       random_tensor({1, 6, 5, 2, 2}, rng)) < 1e-5);
  CHECK(max_grad_error([&](Tape& t, Var x) { return weighted_sum(t, project_large_scale(x, m)); },
                       random_tensor({1, 6, 5, 2}, rng)) < 1e-5);
  const Tensor kernel = random_tensor({2, 3, 4, 3, 2}, rng);
  CHECK(max_grad_error(
            [&](Tape& t, Var x) { return weighted_sum(t, spectral_embed(x, t.constant(kernel), m)); },
            random_tensor({2, 6, 5, 2}, rng)) < 1e-5);
  const Tensor u = random_tensor({2, 6, 5, 2}, rng);
  CHECK(max_grad_error(
            [&](Tape& t, Var w) { return weighted_sum(t, spectral_embed(t.constant(u), w, m)); },
            kernel) < 1e-5);
}

TEST_CASE("mode set validation and mapping") {
  CHECK_THROWS_AS(ModeSet({17, 4}).validate_for(16, 16), DimensionError);
  CHECK_THROWS_AS(ModeSet({0, 4}).validate_for(16, 16), DimensionError);
  CHECK(ModeSet::slot_index(0, 4, 16) == 0);
  CHECK(ModeSet::slot_index(1, 4, 16) == 1);
  CHECK(ModeSet::slot_index(2, 4, 16) == 14);
  CHECK(ModeSet::slot_index(3, 4, 16) == 15);
  CHECK(ModeSet::index_retained(15, 4, 16));
  CHECK_FALSE(ModeSet::index_retained(14, 4, 16));
  for (std::size_t i = 0; i < 16; ++i) {
    // symmetric under k -> -k
    CHECK(ModeSet::index_retained(i, 5, 16) == ModeSet::index_retained((16 - i) % 16, 5, 16));
  }
  CHECK(ModeSet::index_retained(8, 16, 16));
}

TEST_CASE("projection identities") {
  std::mt19937_64 rng(24);
  const ModeSet m{4, 4};
  const Tensor u = random_tensor({1, 16, 16, 1}, rng);
  const Tensor p = project_large_scale(u, m);
  const Tensor q = project_small_scale(u, m);

  CHECK(max_abs_diff(p + q, u) < 1e-12);
  CHECK(max_abs_diff(project_large_scale(p, m), p) < 1e-12);
  CHECK(max_abs(project_small_scale(p, m)) < 1e-12);
  CHECK(std::abs(dot(p, q)) < 1e-10);
  CHECK(max_abs_diff(p, oracle::naive_low_pass(u, 4, 4)) < 1e-10);
  CHECK(excluded_energy(p, m) < 1e-10);

  const Tensor constant({1, 8, 8, 2}, 3.25);
  CHECK(max_abs_diff(project_large_scale(constant, m), constant) < 1e-12);
  CHECK(max_abs(project_small_scale(constant, m)) < 1e-12);

  Tensor wave({1, 16, 16, 1});
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) wave.at({0, i, j, 0}) = std::sin(2 * std::numbers::pi * 5 * i / 16.0);
  CHECK(max_abs(project_large_scale(wave, m)) < 1e-12);

  CHECK_THROWS_AS(project_large_scale(u, ModeSet{32, 4}), DimensionError);
}

TEST_CASE("projection on odd modes and full grid") {
  std::mt19937_64 rng(25);
  const Tensor u = random_tensor({2, 12, 10, 2}, rng);
  for (ModeSet m : {ModeSet{5, 3}, ModeSet{12, 10}, ModeSet{1, 1}, ModeSet{6, 10}}) {
    CHECK(max_abs_diff(project_large_scale(u, m), oracle::naive_low_pass(u, m.m1, m.m2)) < 1e-10);
  }
}

TEST_CASE("spectral embedding") {
  std::mt19937_64 rng(26);
  const ModeSet m{4, 4};
  const Tensor u = random_tensor({2, 16, 16, 3}, rng);

  Tensor identity({3, 3, 4, 4, 2});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = 0; b < 4; ++b) identity.at({c, c, a, b, 0}) = 1.0;
  CHECK(max_abs_diff(spectral_embed(u, identity, m), project_large_scale(u, m)) < 1e-12);
  CHECK(max_abs(spectral_embed(u, Tensor({3, 3, 4, 4, 2}), m)) == 0.0);

  Parameter w = make_spectral_kernel("w", 3, 5, m, rng);
  const Tensor out = spectral_embed(u, w.value(), m);
  CHECK(out.shape() == Shape{2, 16, 16, 5});
  CHECK(excluded_energy(out, m) < 1e-10);

  CHECK_THROWS_AS(spectral_embed(random_tensor({1, 16, 16, 2}, rng), w.value(), m), DimensionError);
}
