#include "dynformer/attention.hpp"

#include <cmath>

#include "dynformer/cost.hpp"
#include "dynformer/error.hpp"
#include "eigen_maps.hpp"

namespace dynformer {

using namespace detail;

void RopeConfig::validate() const {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ValidationError("rope: head dimension must be even and positive, got " +
                          std::to_string(head_dim));
  }
  if (!(base > 0.0)) throw ValidationError("rope: base must be positive");
}

double RopeConfig::angle(std::size_t position, std::size_t pair) const {
  return static_cast<double>(position) *
         std::pow(base, -2.0 * static_cast<double>(pair) / static_cast<double>(head_dim));
}

namespace {

// Rotation tables [N, d_k/2].
struct RopeTables {
  std::vector<double> cos, sin;
};

RopeTables rope_tables(std::size_t n, const RopeConfig& cfg) {
  const std::size_t pairs = cfg.head_dim / 2;
  RopeTables t{std::vector<double>(n * pairs), std::vector<double>(n * pairs)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < pairs; ++j) {
      const double a = cfg.angle(i, j);
      t.cos[i * pairs + j] = std::cos(a);
      t.sin[i * pairs + j] = std::sin(a);
    }
  }
  return t;
}

void rotate(const Tensor& src, Tensor& dst, const RopeTables& t, std::size_t n, std::size_t d,
            double direction, bool accumulate) {
  const std::size_t pairs = d / 2;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < pairs; ++j) {
      const double c = t.cos[i * pairs + j], s = direction * t.sin[i * pairs + j];
      const double x0 = src[i * d + 2 * j], x1 = src[i * d + 2 * j + 1];
      const double y0 = c * x0 - s * x1, y1 = s * x0 + c * x1;
      if (accumulate) {
        dst[i * d + 2 * j] += y0;
        dst[i * d + 2 * j + 1] += y1;
      } else {
        dst[i * d + 2 * j] = y0;
        dst[i * d + 2 * j + 1] = y1;
      }
    }
  }
}

void require_square(const Var& k, const char* what) {
  if (k.shape().size() != 2 || k.shape()[0] != k.shape()[1]) {
    throw DimensionError(std::string(what) + " must be square, got " + to_string(k.shape()));
  }
}

}  // namespace

Var rope_apply(Var v, const RopeConfig& cfg) {
  cfg.validate();
  if (v.shape().size() != 2 || v.shape()[1] != cfg.head_dim) {
    throw DimensionError("rope: expected [N, " + std::to_string(cfg.head_dim) + "], got " +
                         to_string(v.shape()));
  }
  const std::size_t n = v.shape()[0], d = cfg.head_dim;
  RopeTables tables = rope_tables(n, cfg);
  Tensor out(v.shape());
  rotate(v.value(), out, tables, n, d, 1.0, false);
  count_mulacc(CostCategory::kPointwise, 2 * n * d);
  return v.tape().record(std::move(out), {v},
                         [v, tables = std::move(tables), n, d](Tape& t, const Tensor& g) {
                           rotate(g, t.grad_accumulator(v), tables, n, d, -1.0, true);
                         });
}

Tensor rope_apply(const Tensor& v, const RopeConfig& cfg) {
  Tape tape;
  return rope_apply(tape.constant(v), cfg).value();
}

AxisFeatures axis_reduce(Var u_tilde, const AffineVars& proj_x, const AffineVars& proj_y) {
  if (u_tilde.shape().size() != 3) {
    throw DimensionError("axis_reduce: expected latent [N1, N2, d], got " +
                         to_string(u_tilde.shape()));
  }
  Var mean_y = mean_over_axis(u_tilde, 1);  // [N1, d]
  Var mean_x = mean_over_axis(u_tilde, 0);  // [N2, d]
  return {linear(mean_y, proj_x.w, proj_x.b), linear(mean_x, proj_y.w, proj_y.b)};
}

KernelPair kernel_matrices(const AxisFeatures& feat, const AffineVars& phi_q,
                           const AffineVars& phi_k, const RopeConfig& cfg) {
  auto kernel = [&](Var f) {
    Var q = linear(f, phi_q.w, phi_q.b);
    Var k = linear(f, phi_k.w, phi_k.b);
    if (q.shape()[1] != cfg.head_dim) {
      throw DimensionError("kernel_matrices: query width " + std::to_string(q.shape()[1]) +
                           " differs from head dimension " + std::to_string(cfg.head_dim));
    }
    if (cfg.enabled) {
      q = rope_apply(q, cfg);
      k = rope_apply(k, cfg);
    }
    return matmul(q, transpose(k), CostCategory::kAttentionCore);
  };
  return {kernel(feat.ux), kernel(feat.uy)};
}

Var kronecker_mix(const KernelPair& kp, Var v) {
  require_square(kp.k1, "kronecker_mix K1");
  require_square(kp.k2, "kronecker_mix K2");
  const Shape& vs = v.shape();
  if (vs.size() != 3 || vs[0] != kp.k1.shape()[0] || vs[1] != kp.k2.shape()[0]) {
    throw DimensionError("kronecker_mix: kernels " + to_string(kp.k1.shape()) + ", " +
                         to_string(kp.k2.shape()) + " do not match values " + to_string(vs));
  }
  const std::size_t n1 = vs[0], n2 = vs[1], c = vs[2];

  // Stage 1 contracts the x axis with one GEMM over [N1, N2*C]; stage 2
  // contracts y row by row.
  Tensor mid(vs);
  mmat(mid, n1, n2 * c).noalias() = cmat(kp.k1.value(), n1, n1) * cmat(v.value(), n1, n2 * c);
  Tensor out(vs);
  const auto k2 = cmat(kp.k2.value(), n2, n2);
  for (std::size_t i = 0; i < n1; ++i) {
    mmat(out, n2, c, i * n2 * c).noalias() = k2 * cmat(mid, n2, c, i * n2 * c);
  }
  count_mulacc(CostCategory::kAttentionCore, n1 * n2 * (n1 + n2) * c);

  Var k1v = kp.k1, k2v = kp.k2;
  return v.tape().record(
      std::move(out), {k1v, k2v, v},
      [k1v, k2v, v, mid = std::move(mid), n1, n2, c](Tape& t, const Tensor& g) {
        const auto k2 = cmat(t.value(k2v), n2, n2);
        Tensor gmid({n1, n2, c});
        const bool need_k2 = t.requires_grad(k2v);
        RowMat gk2 = RowMat::Zero(static_cast<Eigen::Index>(n2), static_cast<Eigen::Index>(n2));
        for (std::size_t i = 0; i < n1; ++i) {
          const auto gi = cmat(g, n2, c, i * n2 * c);
          mmat(gmid, n2, c, i * n2 * c).noalias() = k2.transpose() * gi;
          if (need_k2) gk2.noalias() += gi * cmat(mid, n2, c, i * n2 * c).transpose();
        }
        if (need_k2) mmat(t.grad_accumulator(k2v), n2, n2) += gk2;
        const auto gm = cmat(gmid, n1, n2 * c);
        if (t.requires_grad(k1v)) {
          mmat(t.grad_accumulator(k1v), n1, n1).noalias() +=
              gm * cmat(t.value(v), n1, n2 * c).transpose();
        }
        if (t.requires_grad(v)) {
          mmat(t.grad_accumulator(v), n1, n2 * c).noalias() +=
              cmat(t.value(k1v), n1, n1).transpose() * gm;
        }
      });
}

Var full_attention_oracle(Var kernel, Var v) {
  require_square(kernel, "full attention kernel");
  const Shape& vs = v.shape();
  if (vs.size() != 3 || vs[0] * vs[1] != kernel.shape()[0]) {
    throw DimensionError("full_attention_oracle: kernel " + to_string(kernel.shape()) +
                         " does not match values " + to_string(vs));
  }
  Var flat = reshape(v, {vs[0] * vs[1], vs[2]});
  return reshape(matmul(kernel, flat, CostCategory::kAttentionCore), vs);
}

Var kronecker_attention(Var u_tilde, const KroneckerAttentionVars& vars, double rope_base,
                        bool rope) {
  if (vars.heads.empty()) throw ValidationError("kronecker_attention: no heads");
  const AxisFeatures feat = axis_reduce(u_tilde, vars.proj_x, vars.proj_y);
  std::vector<Var> outs;
  outs.reserve(vars.heads.size());
  for (const HeadVars& h : vars.heads) {
    const RopeConfig cfg{h.q.w.shape()[1], rope_base, rope};
    const KernelPair kp = kernel_matrices(feat, h.q, h.k, cfg);
    outs.push_back(kronecker_mix(kp, linear(u_tilde, h.v.w, h.v.b)));
  }
  return outs.size() == 1 ? outs.front() : concat_last(outs);
}

}  // namespace dynformer
