#include "dynformer/ablation.hpp"

#include "dynformer/error.hpp"

namespace dynformer {

namespace {

struct Flat {
  std::size_t n1, n2, points;
  Var q, k, v;
};

Flat project_flat(Var u, const HeadVars& qkv, const char* what) {
  const Shape& s = u.shape();
  if (s.size() != 3) {
    throw DimensionError(std::string(what) + ": expected latent [N1, N2, d], got " + to_string(s));
  }
  const std::size_t p = s[0] * s[1];
  Var flat = reshape(u, {p, s[2]});
  return {s[0], s[1], p, linear(flat, qkv.q.w, qkv.q.b), linear(flat, qkv.k.w, qkv.k.b),
          linear(flat, qkv.v.w, qkv.v.b)};
}

}  // namespace

Var classical_attention(Var u_tilde, const HeadVars& qkv) {
  const Shape& s = u_tilde.shape();
  if (s.size() == 3 && s[0] * s[1] > kClassicalAttentionMaxPoints) {
    throw ValidationError("classical attention: grid of " + std::to_string(s[0] * s[1]) +
                          " points exceeds the dense-kernel limit of " +
                          std::to_string(kClassicalAttentionMaxPoints));
  }
  const Flat f = project_flat(u_tilde, qkv, "classical_attention");
  Var kernel = matmul(f.q, transpose(f.k), CostCategory::kAttentionCore);
  Var out = matmul(kernel, f.v, CostCategory::kAttentionCore);
  return reshape(out, {f.n1, f.n2, f.v.shape()[1]});
}

Var linear_attention(Var u_tilde, const HeadVars& qkv) {
  const Flat f = project_flat(u_tilde, qkv, "linear_attention");
  Tape& tape = u_tilde.tape();
  Var phi_q = softmax_last(f.q);
  Var phi_k_t = transpose(softmax_last(f.k));  // [d_k, P]
  Var state = matmul(phi_k_t, f.v, CostCategory::kAttentionCore);
  Var norm = matmul(phi_k_t, tape.constant(Tensor({f.points, 1}, 1.0)),
                    CostCategory::kAttentionCore);
  Var num = matmul(phi_q, state, CostCategory::kAttentionCore);
  Var den = reshape(matmul(phi_q, norm, CostCategory::kAttentionCore), {f.points});
  return reshape(divide_rows(num, den), {f.n1, f.n2, f.v.shape()[1]});
}

}  // namespace dynformer
