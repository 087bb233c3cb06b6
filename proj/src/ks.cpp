#include <cmath>
#include <complex>
#include <random>

#include "dynformer/error.hpp"
#include "dynformer/fft.hpp"
#include "dynformer/pde.hpp"

namespace dynformer {

using cplx = std::complex<double>;

std::uint64_t trajectory_seed(std::uint64_t base, std::size_t index) {
  // splitmix64 finalizer over (base, index)
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

void KsConfig::validate() const {
  const auto pow2 = [](std::size_t n) { return n >= 2 && (n & (n - 1)) == 0; };
  if (!pow2(resolution_sim)) throw ValidationError("ks: resolution_sim must be a power of two");
  if (resolution_out == 0 || resolution_sim < 4 * resolution_out ||
      resolution_sim % resolution_out != 0) {
    throw ValidationError("ks: resolution_sim must be a multiple of resolution_out and at least 4x it");
  }
  if (!(dt > 0.0) || !(domain > 0.0) || t_burn < 0.0 || !(t_final > 0.0)) {
    throw ValidationError("ks: dt, domain and t_final must be positive, t_burn non-negative");
  }
  if (n_snap < 2 || t_in == 0 || t_in >= n_snap) {
    throw ValidationError("ks: need n_snap >= 2 and 0 < t_in < n_snap");
  }
  if (n_traj == 0) throw ValidationError("ks: n_traj must be positive");
}

KsSolver::KsSolver(std::size_t n, double domain, double dt) : n_(n), dt_(dt) {
  const std::size_t m = n / 2 + 1;
  wavenumber_.resize(m);
  e_.resize(m);
  e2_.resize(m);
  q_.resize(m);
  f1_.resize(m);
  f2_.resize(m);
  f3_.resize(m);
  constexpr int kContour = 32;
  for (std::size_t j = 0; j < m; ++j) {
    // The Nyquist mode is treated as k = 0.
    const double k = (j == n / 2) ? 0.0 : 2.0 * std::numbers::pi * static_cast<double>(j) / domain;
    wavenumber_[j] = k;
    const double l = k * k - k * k * k * k;
    e_[j] = std::exp(dt * l);
    e2_[j] = std::exp(dt * l / 2.0);
    double q = 0, a = 0, b = 0, c = 0;
    for (int p = 1; p <= kContour; ++p) {
      const cplx r = std::exp(cplx(0.0, std::numbers::pi * (p - 0.5) / kContour));
      const cplx z = dt * l + r;
      const cplx ez = std::exp(z);
      q += ((std::exp(z / 2.0) - 1.0) / z).real();
      a += ((-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / (z * z * z)).real();
      b += ((2.0 + z + ez * (z - 2.0)) / (z * z * z)).real();
      c += ((-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / (z * z * z)).real();
    }
    q_[j] = dt * q / kContour;
    f1_[j] = dt * a / kContour;
    f2_[j] = dt * b / kContour;
    f3_[j] = dt * c / kContour;
  }
}

void KsSolver::step(std::vector<double>& u) const {
  const std::size_t m = n_ / 2 + 1;
  std::vector<cplx> v(m), nv(m), na(m), nb(m), nc(m), a(m), b(m), c(m);
  std::vector<double> phys(n_);

  // N(w) = -1/2 i k FFT(ifft(w)^2)
  auto nonlinear = [&](const std::vector<cplx>& w, std::vector<cplx>& out) {
    fft::inverse1d_real(w, phys);
    for (double& x : phys) x *= x;
    fft::forward1d_real(phys, out);
    for (std::size_t j = 0; j < m; ++j) out[j] *= cplx(0.0, -0.5 * wavenumber_[j]);
  };

  fft::forward1d_real(u, v);
  nonlinear(v, nv);
  for (std::size_t j = 0; j < m; ++j) a[j] = e2_[j] * v[j] + q_[j] * nv[j];
  nonlinear(a, na);
  for (std::size_t j = 0; j < m; ++j) b[j] = e2_[j] * v[j] + q_[j] * na[j];
  nonlinear(b, nb);
  for (std::size_t j = 0; j < m; ++j) c[j] = e2_[j] * a[j] + q_[j] * (2.0 * nb[j] - nv[j]);
  nonlinear(c, nc);
  for (std::size_t j = 0; j < m; ++j) {
    v[j] = e_[j] * v[j] + nv[j] * f1_[j] + 2.0 * (na[j] + nb[j]) * f2_[j] + nc[j] * f3_[j];
  }
  fft::inverse1d_real(v, u);
}

void KsSolver::advance(std::vector<double>& u, double duration) const {
  const double steps = std::round(duration / dt_);
  if (std::abs(steps * dt_ - duration) > 1e-9 * std::max(1.0, duration)) {
    throw ValidationError("ks: duration " + std::to_string(duration) +
                          " is not a multiple of dt " + std::to_string(dt_));
  }
  for (long s = 0; s < static_cast<long>(steps); ++s) step(u);
}

Tensor simulate_ks(const KsConfig& cfg, std::size_t trajectory) {
  cfg.validate();
  // Shrink the step so that the snapshot spacing is a whole number of steps.
  const double spacing = cfg.t_final / static_cast<double>(cfg.n_snap - 1);
  const double substeps = std::ceil(spacing / cfg.dt - 1e-12);
  const double h = spacing / substeps;
  const KsSolver solver(cfg.resolution_sim, cfg.domain, h);

  std::mt19937_64 rng(trajectory_seed(cfg.seed, trajectory));
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> u(cfg.resolution_sim);
  for (double& x : u) x = dist(rng);

  auto check = [&](std::size_t snap) {
    for (double x : u) {
      if (!std::isfinite(x)) {
        throw NumericalError("ks: trajectory " + std::to_string(trajectory) +
                             " became non-finite before snapshot " + std::to_string(snap));
      }
    }
  };
  const long burn_steps = static_cast<long>(std::ceil(cfg.t_burn / h - 1e-12));
  for (long s = 0; s < burn_steps; ++s) solver.step(u);
  check(0);

  const std::size_t stride = cfg.resolution_sim / cfg.resolution_out;
  Tensor out({cfg.n_snap, cfg.resolution_out});
  for (std::size_t k = 0; k < cfg.n_snap; ++k) {
    if (k > 0) {
      for (long s = 0; s < static_cast<long>(substeps); ++s) solver.step(u);
      check(k);
    }
    for (std::size_t i = 0; i < cfg.resolution_out; ++i) out.at({k, i}) = u[i * stride];
  }
  return out;
}

TrajectoryDataset generate_ks(const KsConfig& cfg) {
  cfg.validate();
  TrajectoryDataset d;
  d.benchmark = Benchmark::kKs;
  d.channels = 1;
  d.t_in = cfg.t_in;
  d.t_out = cfg.n_snap - cfg.t_in;
  d.s1 = cfg.resolution_out;
  d.s2 = 1;
  d.samples.resize(cfg.n_traj);
  parallel_for(cfg.n_traj, [&](std::size_t i) {
    const Tensor traj = simulate_ks(cfg, i);
    const std::size_t n = cfg.resolution_out;
    TrajectorySample s{Tensor({1, d.t_in, n, 1}), Tensor({1, d.t_out, n, 1})};
    for (std::size_t t = 0; t < cfg.n_snap; ++t) {
      for (std::size_t x = 0; x < n; ++x) {
        if (t < d.t_in) {
          s.input.at({0, t, x, 0}) = traj.at({t, x});
        } else {
          s.target.at({0, t - d.t_in, x, 0}) = traj.at({t, x});
        }
      }
    }
    d.samples[i] = std::move(s);
  });
  d.compute_extrema();
  return d;
}

}  // namespace dynformer
