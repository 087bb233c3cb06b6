#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "dynformer/error.hpp"
#include "dynformer/pde.hpp"

namespace dynformer {

void DarcyConfig::validate() const {
  if (resolution_solve < 8 || resolution_out < 2 || resolution_out > resolution_solve) {
    throw ValidationError("darcy: need resolution_solve >= 8 and 2 <= resolution_out <= resolution_solve");
  }
  if (n_samples == 0) throw ValidationError("darcy: n_samples must be positive");
}

Tensor sample_grf(std::size_t resolution, std::uint64_t seed, std::size_t n_modes) {
  if (resolution < 2) throw ValidationError("grf: resolution must be at least 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto r = static_cast<Eigen::Index>(resolution);
  const auto m = static_cast<Eigen::Index>(n_modes);
  // Coefficients of the Neumann-Laplacian eigenfunctions, scaled by the
  // square root of the covariance eigenvalue (pi^2 |k|^2 + 9)^-2.
  Eigen::MatrixXd coeff(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double lambda = std::numbers::pi * std::numbers::pi * static_cast<double>(i * i + j * j) + 9.0;
      coeff(i, j) = normal(rng) / lambda;
    }
  }
  Eigen::MatrixXd basis(r, m);
  for (Eigen::Index x = 0; x < r; ++x) {
    const double pos = static_cast<double>(x) / static_cast<double>(r - 1);
    for (Eigen::Index i = 0; i < m; ++i) {
      basis(x, i) = i == 0 ? 1.0 : std::sqrt(2.0) * std::cos(std::numbers::pi * static_cast<double>(i) * pos);
    }
  }
  const Eigen::MatrixXd field = basis * coeff * basis.transpose();
  Tensor out({resolution, resolution});
  for (Eigen::Index x = 0; x < r; ++x)
    for (Eigen::Index y = 0; y < r; ++y) out[static_cast<std::size_t>(x * r + y)] = field(x, y);
  return out;
}

Tensor threshold_permeability(const Tensor& a) {
  Tensor k(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) k[i] = a[i] >= 0.0 ? 12.0 : 3.0;
  return k;
}

Tensor sample_grf_threshold(std::size_t resolution, std::uint64_t seed) {
  if (resolution < 8) throw ValidationError("grf: resolution must be at least 8");
  return threshold_permeability(sample_grf(resolution, seed));
}

namespace {

std::size_t grid_size(const Tensor& k) {
  if (k.rank() != 2 || k.extent(0) != k.extent(1) || k.extent(0) < 3) {
    throw DimensionError("darcy: permeability must be a square grid of at least 3x3, got " +
                         to_string(k.shape()));
  }
  return k.extent(0);
}

double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

// y = A x on interior nodes; boundary entries of x are treated as zero and
// boundary entries of y are left at zero.
void apply(const Tensor& k, const std::vector<double>& x, std::vector<double>& y, std::size_t r) {
  const double inv_h2 = static_cast<double>((r - 1) * (r - 1));
  for (std::size_t i = 1; i + 1 < r; ++i) {
    for (std::size_t j = 1; j + 1 < r; ++j) {
      const std::size_t p = i * r + j;
      const double kp = k[p];
      double acc = 0.0;
      for (std::size_t q : {p - r, p + r, p - 1, p + 1}) {
        const std::size_t qi = q / r, qj = q % r;
        const bool boundary = qi == 0 || qj == 0 || qi == r - 1 || qj == r - 1;
        acc += harmonic(kp, k[q]) * (x[p] - (boundary ? 0.0 : x[q]));
      }
      y[p] = acc * inv_h2;
    }
  }
}

}  // namespace

Tensor darcy_apply(const Tensor& k, const Tensor& u) {
  const std::size_t r = grid_size(k);
  require_same_shape(k.shape(), u.shape(), "darcy_apply");
  std::vector<double> y(r * r, 0.0);
  apply(k, u.vec(), y, r);
  return Tensor({r, r}, std::move(y));
}

Tensor solve_darcy_fd(const Tensor& k, double f, double tol, std::size_t max_iter,
                      DarcySolveStats* stats) {
  const std::size_t r = grid_size(k);
  for (double v : k.data()) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError("darcy: permeability must be positive");
  }
  const std::size_t n = r * r;
  auto interior = [r](std::size_t p) {
    const std::size_t i = p / r, j = p % r;
    return i > 0 && j > 0 && i + 1 < r && j + 1 < r;
  };
  std::vector<double> b(n, 0.0), x(n, 0.0), res(n, 0.0), dir(n, 0.0), ad(n, 0.0);
  double b_norm2 = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    if (interior(p)) {
      b[p] = f;
      b_norm2 += f * f;
    }
  }
  DarcySolveStats local;
  if (b_norm2 == 0.0) {
    if (stats) *stats = local;
    return Tensor({r, r});
  }
  res = b;
  dir = res;
  double rr = b_norm2;
  const double target = tol * tol * b_norm2;
  std::size_t it = 0;
  while (rr > target) {
    if (it == max_iter) {
      throw NumericalError("darcy: conjugate gradients did not converge in " +
                           std::to_string(max_iter) + " iterations (relative residual " +
                           std::to_string(std::sqrt(rr / b_norm2)) + ")");
    }
    apply(k, dir, ad, r);
    double dad = 0.0;
    for (std::size_t p = 0; p < n; ++p) dad += dir[p] * ad[p];
    const double alpha = rr / dad;
    double rr_new = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      if (!interior(p)) continue;
      x[p] += alpha * dir[p];
      res[p] -= alpha * ad[p];
      rr_new += res[p] * res[p];
    }
    const double beta = rr_new / rr;
    for (std::size_t p = 0; p < n; ++p) {
      if (interior(p)) dir[p] = res[p] + beta * dir[p];
    }
    rr = rr_new;
    ++it;
  }
  local.iterations = it;
  local.relative_residual = std::sqrt(rr / b_norm2);
  if (stats) *stats = local;
  return Tensor({r, r}, std::move(x));
}

Tensor downsample_nodes(const Tensor& field, std::size_t r_out) {
  const std::size_t r = field.extent(0);
  if (field.rank() != 2 || field.extent(1) != r || r_out < 2 || r_out > r) {
    throw DimensionError("downsample_nodes: cannot map " + to_string(field.shape()) + " to " +
                         std::to_string(r_out) + " nodes per side");
  }
  std::vector<std::size_t> idx(r_out);
  for (std::size_t i = 0; i < r_out; ++i) {
    idx[i] = static_cast<std::size_t>(std::llround(static_cast<double>(i * (r - 1)) /
                                                   static_cast<double>(r_out - 1)));
  }
  Tensor out({r_out, r_out});
  for (std::size_t i = 0; i < r_out; ++i)
    for (std::size_t j = 0; j < r_out; ++j) out.at({i, j}) = field.at({idx[i], idx[j]});
  return out;
}

TrajectoryDataset generate_darcy(const DarcyConfig& cfg) {
  cfg.validate();
  TrajectoryDataset d;
  d.benchmark = Benchmark::kDarcy;
  d.channels = d.t_in = d.t_out = 1;
  d.s1 = d.s2 = cfg.resolution_out;
  d.samples.resize(cfg.n_samples);
  parallel_for(cfg.n_samples, [&](std::size_t i) {
    const Tensor k = sample_grf_threshold(cfg.resolution_solve, trajectory_seed(cfg.seed, i));
    const Tensor u = solve_darcy_fd(k, cfg.forcing);
    const std::size_t r = cfg.resolution_out;
    d.samples[i] = {downsample_nodes(k, r).reshaped({1, 1, r, r}),
                    downsample_nodes(u, r).reshaped({1, 1, r, r})};
  });
  d.compute_extrema();
  return d;
}

}  // namespace dynformer
