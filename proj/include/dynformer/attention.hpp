#pragma once

#include <cstddef>
#include <vector>

#include "dynformer/autodiff.hpp"

namespace dynformer {

// Rotary position embedding over the last axis of [N, d_k] features. The
// pair (2j, 2j+1) at position i is rotated by i * base^(-2j/d_k).
struct RopeConfig {
  std::size_t head_dim = 2;
  double base = 10000.0;
  bool enabled = true;

  void validate() const;
  double angle(std::size_t position, std::size_t pair) const;
};

Var rope_apply(Var v, const RopeConfig& cfg);
Tensor rope_apply(const Tensor& v, const RopeConfig& cfg);

// Axis-contracted features of one latent state [N1, N2, d].
struct AxisFeatures {
  Var ux;  // [N1, d]
  Var uy;  // [N2, d]
};

// Affine weight/bias pair applied over the last axis.
struct AffineVars {
  Var w;
  Var b;
};

AxisFeatures axis_reduce(Var u_tilde, const AffineVars& proj_x, const AffineVars& proj_y);

struct KernelPair {
  Var k1;  // [N1, N1]
  Var k2;  // [N2, N2]
};

// K1 = rope(phi_q(ux)) rope(phi_k(ux))^T, and likewise along y.
KernelPair kernel_matrices(const AxisFeatures& feat, const AffineVars& phi_q,
                           const AffineVars& phi_k, const RopeConfig& cfg);

// out[:, :, c] = K1 V[:, :, c] K2^T for V of shape [N1, N2, C].
Var kronecker_mix(const KernelPair& kp, Var v);

// Dense kernel [N1 N2, N1 N2] applied to the flattened grid of V.
Var full_attention_oracle(Var kernel, Var v);

// Per-head query, key and value maps.
struct HeadVars {
  AffineVars q;
  AffineVars k;
  AffineVars v;
};

struct KroneckerAttentionVars {
  AffineVars proj_x;
  AffineVars proj_y;
  std::vector<HeadVars> heads;
};

// Multi-head Kronecker attention on one latent state [N1, N2, d]; head
// outputs are concatenated along channels.
Var kronecker_attention(Var u_tilde, const KroneckerAttentionVars& vars, double rope_base = 10000.0,
                        bool rope = true);

}  // namespace dynformer
