#include "oracles.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

#include "dynformer/error.hpp"

namespace dynformer::oracle {

namespace {

using cplx = std::complex<double>;

long signed_freq(std::size_t i, std::size_t n) {
  const long k = static_cast<long>(i), nn = static_cast<long>(n);
  return 2 * k > nn ? k - nn : k;
}

bool kept(std::size_t i, std::size_t m, std::size_t n) {
  if (m >= n) return true;
  const long cutoff = static_cast<long>((m + 1) / 2) - 1;
  return std::abs(signed_freq(i, n)) <= cutoff;
}

struct Dims {
  std::size_t b, n1, n2, c;
};

Dims dims_of(const Tensor& u) {
  const Shape& s = u.shape();
  if (s.size() != 4) throw DimensionError("oracle expects [B, N1, N2, C], got " + to_string(s));
  return {s[0], s[1], s[2], s[3]};
}

cplx twiddle(long k, long j, std::size_t n, double sign) {
  const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k * j % static_cast<long>(n)) /
                       static_cast<double>(n);
  return {std::cos(angle), std::sin(angle)};
}

}  // namespace

Tensor naive_dft2(const Tensor& u) {
  const Dims d = dims_of(u);
  Tensor out({d.b, d.n1, d.n2, d.c, 2});
  for (std::size_t b = 0; b < d.b; ++b) {
    for (std::size_t k1 = 0; k1 < d.n1; ++k1) {
      for (std::size_t k2 = 0; k2 < d.n2; ++k2) {
        for (std::size_t c = 0; c < d.c; ++c) {
          cplx acc = 0.0;
          for (std::size_t j1 = 0; j1 < d.n1; ++j1) {
            const cplx w1 = twiddle(k1, j1, d.n1, -1.0);
            for (std::size_t j2 = 0; j2 < d.n2; ++j2) {
              acc += w1 * twiddle(k2, j2, d.n2, -1.0) * u.at({b, j1, j2, c});
            }
          }
          out.at({b, k1, k2, c, 0}) = acc.real();
          out.at({b, k1, k2, c, 1}) = acc.imag();
        }
      }
    }
  }
  return out;
}

Tensor naive_low_pass(const Tensor& u, std::size_t m1, std::size_t m2) {
  const Dims d = dims_of(u);
  const Tensor spec = naive_dft2(u);
  Tensor out(u.shape());
  const double norm = 1.0 / static_cast<double>(d.n1 * d.n2);
  for (std::size_t b = 0; b < d.b; ++b) {
    for (std::size_t j1 = 0; j1 < d.n1; ++j1) {
      for (std::size_t j2 = 0; j2 < d.n2; ++j2) {
        for (std::size_t c = 0; c < d.c; ++c) {
          cplx acc = 0.0;
          for (std::size_t k1 = 0; k1 < d.n1; ++k1) {
            if (!kept(k1, m1, d.n1)) continue;
            for (std::size_t k2 = 0; k2 < d.n2; ++k2) {
              if (!kept(k2, m2, d.n2)) continue;
              const cplx z{spec.at({b, k1, k2, c, 0}), spec.at({b, k1, k2, c, 1})};
              acc += z * twiddle(k1, j1, d.n1, 1.0) * twiddle(k2, j2, d.n2, 1.0);
            }
          }
          out.at({b, j1, j2, c}) = norm * acc.real();
        }
      }
    }
  }
  return out;
}

Tensor dense_kronecker_apply(const Tensor& k1, const Tensor& k2, const Tensor& v) {
  const std::size_t n1 = k1.extent(0), n2 = k2.extent(0);
  if (v.rank() != 3 || v.extent(0) != n1 || v.extent(1) != n2) {
    throw DimensionError("dense_kronecker_apply: value shape " + to_string(v.shape()));
  }
  const std::size_t c = v.extent(2), n = n1 * n2;
  std::vector<double> big(n * n);
  for (std::size_t i1 = 0; i1 < n1; ++i1)
    for (std::size_t i2 = 0; i2 < n2; ++i2)
      for (std::size_t j1 = 0; j1 < n1; ++j1)
        for (std::size_t j2 = 0; j2 < n2; ++j2)
          big[(i1 * n2 + i2) * n + j1 * n2 + j2] = k1.at({i1, j1}) * k2.at({i2, j2});
  Tensor out(v.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] += big[i * n + j] * v[j * c + ch];
  return out;
}

Tensor darcy_dense_solve(const Tensor& k, double f) {
  const std::size_t r = k.extent(0), m = r - 2;
  const double h = 1.0 / static_cast<double>(r - 1);
  auto id = [m](std::size_t i, std::size_t j) { return static_cast<Eigen::Index>((i - 1) * m + (j - 1)); };
  const auto dim = static_cast<Eigen::Index>(m * m);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd b = Eigen::VectorXd::Constant(dim, f * h * h);
  const int di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const double kp = k.at({i, j});
      for (int s = 0; s < 4; ++s) {
        const std::size_t ni = i + di[s], nj = j + dj[s];
        const double kn = k.at({ni, nj});
        const double face = 2.0 * kp * kn / (kp + kn);
        a(id(i, j), id(i, j)) += face;
        if (ni >= 1 && ni <= m && nj >= 1 && nj <= m) a(id(i, j), id(ni, nj)) -= face;
      }
    }
  }
  const Eigen::VectorXd x = a.partialPivLu().solve(b);
  Tensor u({r, r});
  for (std::size_t i = 1; i <= m; ++i)
    for (std::size_t j = 1; j <= m; ++j) u.at({i, j}) = x(id(i, j));
  return u;
}

double central_difference(const std::function<double()>& loss, Tensor& value,
                          std::size_t index, double step) {
  const double saved = value[index];
  value[index] = saved + step;
  const double plus = loss();
  value[index] = saved - step;
  const double minus = loss();
  value[index] = saved;
  return (plus - minus) / (2.0 * step);
}

}  // namespace dynformer::oracle
