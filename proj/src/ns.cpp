#include <cmath>
#include <random>

#include "dynformer/error.hpp"
#include "dynformer/fft.hpp"
#include "dynformer/pde.hpp"

namespace dynformer {

using cplx = std::complex<double>;

void NsConfig::validate() const {
  const auto pow2 = [](std::size_t n) { return n >= 4 && (n & (n - 1)) == 0; };
  if (!pow2(resolution_sim)) throw ValidationError("ns: resolution_sim must be a power of two >= 4");
  if (resolution_out == 0 || resolution_sim % resolution_out != 0) {
    throw ValidationError("ns: resolution_out must divide resolution_sim");
  }
  if (!(nu > 0.0)) throw ValidationError("ns: viscosity must be positive");
  if (!(dt > 0.0) || !(snapshot_interval > 0.0) || t_burn < 0.0 || !(t_end > t_burn)) {
    throw ValidationError("ns: need dt > 0, snapshot_interval > 0 and t_end > t_burn >= 0");
  }
  if (t_in == 0 || t_out == 0 || t_in + t_out > snapshot_count()) {
    throw ValidationError("ns: t_in + t_out exceeds the " + std::to_string(snapshot_count()) +
                          " recorded snapshots");
  }
  if (n_traj == 0) throw ValidationError("ns: n_traj must be positive");
}

std::size_t NsConfig::snapshot_count() const {
  return static_cast<std::size_t>(std::floor((t_end - t_burn) / snapshot_interval + 1e-9)) + 1;
}

NsSolver::NsSolver(std::size_t n, double nu, double dt) : n_(n), nu_(nu), dt_(dt) {
  const std::size_t m = n / 2 + 1;
  kx_.resize(n * m);
  ky_.resize(n * m);
  k2_.resize(n * m);
  keep_.resize(n * m);
  const long cutoff = static_cast<long>(n) / 3;
  for (std::size_t i = 0; i < n; ++i) {
    const long fx = fft::signed_frequency(i, n);
    for (std::size_t j = 0; j < m; ++j) {
      const long fy = static_cast<long>(j);
      const std::size_t p = i * m + j;
      kx_[p] = static_cast<double>(fx);
      ky_[p] = static_cast<double>(fy);
      k2_[p] = kx_[p] * kx_[p] + ky_[p] * ky_[p];
      keep_[p] = std::labs(fx) <= cutoff && fy <= cutoff;
    }
  }
}

void NsSolver::reset(const Tensor& omega) {
  if (omega.rank() != 2 || omega.extent(0) != n_ || omega.extent(1) != n_) {
    throw DimensionError("ns: initial vorticity must be " + std::to_string(n_) + "x" +
                         std::to_string(n_) + ", got " + to_string(omega.shape()));
  }
  w_hat_.assign(n_ * (n_ / 2 + 1), 0.0);
  fft::forward2d_real(omega.data(), w_hat_, n_, n_);
  for (std::size_t p = 0; p < w_hat_.size(); ++p)
    if (!keep_[p]) w_hat_[p] = 0.0;
  have_prev_ = false;
  time_ = 0.0;
  steps_ = 0;
}

std::vector<cplx> NsSolver::nonlinear(const std::vector<cplx>& w) const {
  const std::size_t m = n_ / 2 + 1, nn = n_ * n_;
  std::vector<cplx> su(w.size()), sv(w.size()), swx(w.size()), swy(w.size());
  for (std::size_t p = 0; p < w.size(); ++p) {
    const cplx psi = k2_[p] > 0.0 ? w[p] / k2_[p] : cplx(0.0);
    su[p] = cplx(0.0, ky_[p]) * psi;    // u = d(psi)/dy
    sv[p] = cplx(0.0, -kx_[p]) * psi;   // v = -d(psi)/dx
    swx[p] = cplx(0.0, kx_[p]) * w[p];
    swy[p] = cplx(0.0, ky_[p]) * w[p];
  }
  std::vector<double> u(nn), v(nn), wx(nn), wy(nn);
  fft::inverse2d_real(su, u, n_, n_);
  fft::inverse2d_real(sv, v, n_, n_);
  fft::inverse2d_real(swx, wx, n_, n_);
  fft::inverse2d_real(swy, wy, n_, n_);
  for (std::size_t i = 0; i < nn; ++i) u[i] = u[i] * wx[i] + v[i] * wy[i];
  std::vector<cplx> out(n_ * m);
  fft::forward2d_real(u, out, n_, n_);
  for (std::size_t p = 0; p < out.size(); ++p)
    if (!keep_[p]) out[p] = 0.0;
  return out;
}

void NsSolver::step() {
  std::vector<cplx> nl = nonlinear(w_hat_);
  for (std::size_t p = 0; p < w_hat_.size(); ++p) {
    if (!keep_[p]) {
      w_hat_[p] = 0.0;
      continue;
    }
    const double d = 0.5 * dt_ * nu_ * k2_[p];
    const cplx adv = have_prev_ ? 1.5 * nl[p] - 0.5 * prev_nl_[p] : nl[p];
    w_hat_[p] = ((1.0 - d) * w_hat_[p] - dt_ * adv) / (1.0 + d);
  }
  prev_nl_ = std::move(nl);
  have_prev_ = true;
  time_ += dt_;
  ++steps_;
  for (const cplx& z : w_hat_) {
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) {
      throw NumericalError("ns: vorticity became non-finite at step " + std::to_string(steps_));
    }
  }
}

void NsSolver::advance(double duration) {
  const double steps = std::round(duration / dt_);
  if (std::abs(steps * dt_ - duration) > 1e-9 * std::max(1.0, duration)) {
    throw ValidationError("ns: duration " + std::to_string(duration) + " is not a multiple of dt");
  }
  for (long s = 0; s < static_cast<long>(steps); ++s) step();
}

Tensor NsSolver::vorticity() const {
  std::vector<double> w(n_ * n_);
  fft::inverse2d_real(w_hat_, w, n_, n_);
  return Tensor({n_, n_}, std::move(w));
}

bool NsSolver::dealiased() const {
  for (std::size_t p = 0; p < w_hat_.size(); ++p)
    if (!keep_[p] && w_hat_[p] != cplx(0.0)) return false;
  return true;
}

Tensor simulate_ns(const NsConfig& cfg, const Tensor& omega0) {
  cfg.validate();
  NsSolver solver(cfg.resolution_sim, cfg.nu, cfg.dt);
  solver.reset(omega0);
  solver.advance(cfg.t_burn);
  const std::size_t count = cfg.snapshot_count(), r = cfg.resolution_out;
  const std::size_t stride = cfg.resolution_sim / r;
  Tensor out({count, r, r});
  for (std::size_t s = 0; s < count; ++s) {
    if (s > 0) solver.advance(cfg.snapshot_interval);
    const Tensor w = solver.vorticity();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j) out.at({s, i, j}) = w.at({i * stride, j * stride});
  }
  return out;
}

Tensor simulate_ns(const NsConfig& cfg, std::size_t trajectory) {
  std::mt19937_64 rng(trajectory_seed(cfg.seed, trajectory));
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  const std::size_t n = cfg.resolution_sim;
  Tensor w({n, n});
  double mean = 0.0;
  for (double& x : w.data()) {
    x = dist(rng);
    mean += x;
  }
  mean /= static_cast<double>(w.size());
  for (double& x : w.data()) x -= mean;
  try {
    return simulate_ns(cfg, w);
  } catch (const NumericalError& e) {
    throw NumericalError("trajectory " + std::to_string(trajectory) + ": " + e.what());
  }
}

TrajectoryDataset generate_ns(const NsConfig& cfg) {
  cfg.validate();
  TrajectoryDataset d;
  d.benchmark = Benchmark::kNs;
  d.channels = 1;
  d.t_in = cfg.t_in;
  d.t_out = cfg.t_out;
  d.s1 = d.s2 = cfg.resolution_out;
  d.samples.resize(cfg.n_traj);
  parallel_for(cfg.n_traj, [&](std::size_t i) {
    const Tensor traj = simulate_ns(cfg, i);
    const std::size_t r = cfg.resolution_out, frame = r * r;
    TrajectorySample s{Tensor({1, d.t_in, r, r}), Tensor({1, d.t_out, r, r})};
    std::copy_n(traj.data().begin(), d.t_in * frame, s.input.data().begin());
    std::copy_n(traj.data().begin() + static_cast<std::ptrdiff_t>(d.t_in * frame), d.t_out * frame,
                s.target.data().begin());
    d.samples[i] = std::move(s);
  });
  d.compute_extrema();
  return d;
}

}  // namespace dynformer
