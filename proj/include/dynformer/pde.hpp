#pragma once

#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

#include "dynformer/dataset.hpp"
#include "dynformer/tensor.hpp"

namespace dynformer {

// ---- Kuramoto-Sivashinsky: u_t + u u_x + u_xx + u_xxxx = 0, periodic ----------

struct KsConfig {
  std::size_t n_traj = 64;
  std::uint64_t seed = 123;
  std::size_t resolution_sim = 512;
  std::size_t resolution_out = 64;
  double domain = 64.0 * std::numbers::pi;
  double dt = 0.25;
  double t_burn = 250.0;
  double t_final = 121.0;  // length of the recorded window
  std::size_t n_snap = 20;
  std::size_t t_in = 10;

  void validate() const;
};

// Pseudospectral ETDRK4 integrator on a fixed grid and step.
class KsSolver {
 public:
  KsSolver(std::size_t n, double domain, double dt);

  void step(std::vector<double>& u) const;
  // Integrates from t to t + duration with the fixed step; duration must be
  // an integer multiple of dt up to rounding.
  void advance(std::vector<double>& u, double duration) const;

  std::size_t size() const { return n_; }
  double dt() const { return dt_; }

 private:
  std::size_t n_;
  double dt_;
  std::vector<double> wavenumber_;
  std::vector<double> e_, e2_, q_, f1_, f2_, f3_;
};

// [n_snap, resolution_out] snapshots of one trajectory.
Tensor simulate_ks(const KsConfig& cfg, std::size_t trajectory);
TrajectoryDataset generate_ks(const KsConfig& cfg);

// ---- Darcy: -div(k grad u) = f on [0,1]^2, u = 0 on the boundary -----------------

// Thresholded Gaussian random field on an r x r node grid over [0,1]^2:
// 12 where the field is >= 0, 3 elsewhere.
Tensor sample_grf_threshold(std::size_t resolution, std::uint64_t seed);
// Underlying field before thresholding.
Tensor sample_grf(std::size_t resolution, std::uint64_t seed, std::size_t n_modes = 64);
Tensor threshold_permeability(const Tensor& a);

struct DarcySolveStats {
  std::size_t iterations = 0;
  double relative_residual = 0.0;
};

// Five-point flux-form discretization with harmonic-mean face
// permeabilities on the nodes of k (shape [r, r]); conjugate gradients to
// relative residual tol. Returns u on the same [r, r] node grid.
Tensor solve_darcy_fd(const Tensor& k, double f, double tol = 1e-12,
                      std::size_t max_iter = 20000, DarcySolveStats* stats = nullptr);

// Applies the discrete operator to interior values of u ([r, r], boundary
// ignored); result is zero on the boundary. Used for residual checks.
Tensor darcy_apply(const Tensor& k, const Tensor& u);

// Nearest-node resampling of an [r, r] field to [r_out, r_out].
Tensor downsample_nodes(const Tensor& field, std::size_t r_out);

struct DarcyConfig {
  std::size_t n_samples = 32;
  std::uint64_t seed = 123;
  std::size_t resolution_solve = 129;
  std::size_t resolution_out = 49;
  double forcing = 1.0;

  void validate() const;
};

TrajectoryDataset generate_darcy(const DarcyConfig& cfg);

// ---- 2D Navier-Stokes, vorticity form on [0, 2pi)^2 --------------------------------

struct NsConfig {
  std::size_t n_traj = 32;
  std::uint64_t seed = 123;
  std::size_t resolution_sim = 64;
  std::size_t resolution_out = 64;
  double nu = 1e-3;
  double dt = 2e-3;
  double t_burn = 10.0;
  double t_end = 30.0;
  double snapshot_interval = 1.0;
  std::size_t t_in = 10;
  std::size_t t_out = 10;

  void validate() const;
  std::size_t snapshot_count() const;
};

// Crank-Nicolson diffusion with second-order Adams-Bashforth advection;
// the 2/3-rule mask is applied to the state after every step.
class NsSolver {
 public:
  NsSolver(std::size_t n, double nu, double dt);

  // omega: [n, n] physical vorticity. Returns the dealiased initial state.
  void reset(const Tensor& omega);
  void step();
  void advance(double duration);
  Tensor vorticity() const;
  double time() const { return time_; }
  std::size_t steps() const { return steps_; }
  // True if every retained coefficient outside the 2/3 band is exactly 0.
  bool dealiased() const;

 private:
  std::vector<std::complex<double>> nonlinear(const std::vector<std::complex<double>>& w) const;

  std::size_t n_;
  double nu_, dt_;
  std::vector<double> kx_, ky_, k2_;
  std::vector<char> keep_;
  std::vector<std::complex<double>> w_hat_, prev_nl_;
  bool have_prev_ = false;
  double time_ = 0.0;
  std::size_t steps_ = 0;
};

// All snapshot_count() frames [S, N, N] of one trajectory.
Tensor simulate_ns(const NsConfig& cfg, std::size_t trajectory);
Tensor simulate_ns(const NsConfig& cfg, const Tensor& omega0);
TrajectoryDataset generate_ns(const NsConfig& cfg);

// Seed of trajectory i derived from a base seed.
std::uint64_t trajectory_seed(std::uint64_t base, std::size_t index);

}  // namespace dynformer
