#pragma once

#include <cstddef>

#include "dynformer/attention.hpp"

namespace dynformer {

// Largest flattened grid for which the dense attention kernel is built.
inline constexpr std::size_t kClassicalAttentionMaxPoints = 4096;

// Unfactorized attention on one latent state [N1, N2, d]: q, k, v are
// pointwise maps, the kernel is q k^T over all grid points. Throws
// ValidationError above kClassicalAttentionMaxPoints points.
Var classical_attention(Var u_tilde, const HeadVars& qkv);

// Softmax-feature linear attention:
//   out_i = phi(q_i) (phi(K)^T V) / (phi(q_i) . phi(K)^T 1)
// with phi a row softmax; cost grows linearly with the number of points.
Var linear_attention(Var u_tilde, const HeadVars& qkv);

}  // namespace dynformer
