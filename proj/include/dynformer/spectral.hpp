#pragma once

#include <cstddef>
#include <random>

#include "dynformer/autodiff.hpp"

namespace dynformer {

// Retained Fourier modes per spatial axis (m2 = 1 for one-dimensional data
// stored as N x 1 grids).
//
// A kernel slot s in [0, m) addresses DFT index s when s < ceil(m/2) and
// n - m + s otherwise. A slot is active when its signed frequency f satisfies
// |f| <= ceil(m/2) - 1, or when m == n (every mode kept). For even m < n this
// leaves the single unpaired slot at frequency -m/2 inactive, which keeps the
// retained set closed under k -> -k so that projections of real fields are
// real, idempotent projectors.
struct ModeSet {
  std::size_t m1 = 1;
  std::size_t m2 = 1;

  void validate_for(std::size_t n1, std::size_t n2) const;

  static std::size_t slot_index(std::size_t slot, std::size_t m, std::size_t n);
  static bool index_retained(std::size_t index, std::size_t m, std::size_t n);

  bool retains(std::size_t i1, std::size_t i2, std::size_t n1, std::size_t n2) const {
    return index_retained(i1, m1, n1) && index_retained(i2, m2, n2);
  }

  friend bool operator==(const ModeSet&, const ModeSet&) = default;
};

// ---- differentiable spectral operations --------------------------------------
// Real fields have shape [..., N1, N2, C]; complex spectra append an axis of
// extent 2. Leading axes are treated as batch.

// Unnormalized forward DFT of a real field over (N1, N2).
Var fft2(Var x);
// Normalized inverse DFT of a complex spectrum.
Var ifft2(Var z);
Var real_part(Var z);
// Zeroes every coefficient outside the retained block.
Var mask_modes(Var z, const ModeSet& modes);
// Per-mode complex channel mixing on the retained block:
//   out[k, c_out] = sum_{c_in} W[c_in, c_out, k] * z[k, c_in]
// with W of shape [C_in, C_out, M1, M2, 2]; zero outside the block.
Var spectral_mix(Var z, Var kernel, const ModeSet& modes);

// P_M u: the real part of the inverse transform of the truncated spectrum.
Var project_large_scale(Var u, const ModeSet& modes);
// Q_M u = u - P_M u.
Var project_small_scale(Var u, const ModeSet& modes);

// FFT -> truncate -> complex channel mixing -> zero-pad -> inverse FFT ->
// real part. The imaginary residue is discarded.
Var spectral_embed(Var u, Var kernel, const ModeSet& modes);

Tensor project_large_scale(const Tensor& u, const ModeSet& modes);
Tensor project_small_scale(const Tensor& u, const ModeSet& modes);
Tensor spectral_embed(const Tensor& u, const Tensor& kernel, const ModeSet& modes);

// Complex kernel [d_in, d_out, M1, M2, 2] with independent real and
// imaginary entries drawn from Normal(0, variance 1 / (d_in * d_out)).
Parameter make_spectral_kernel(std::string name, std::size_t d_in, std::size_t d_out,
                               const ModeSet& modes, std::mt19937_64& rng);

}  // namespace dynformer
