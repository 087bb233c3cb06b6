#pragma once

#include <complex>
#include <cstddef>
#include <span>

namespace dynformer::fft {

using cplx = std::complex<double>;

// Batched two-dimensional complex transforms over channel-last data laid out
// as [batch, n1, n2, channels]. The forward transform is unnormalized, the
// inverse carries the 1/(n1*n2) factor, so inverse(forward(x)) == x.
void forward2d(std::span<const cplx> in, std::span<cplx> out, std::size_t batch,
               std::size_t n1, std::size_t n2, std::size_t channels);
void inverse2d(std::span<const cplx> in, std::span<cplx> out, std::size_t batch,
               std::size_t n1, std::size_t n2, std::size_t channels);

// Real-to-half-spectrum transforms used by the PDE solvers. `spectrum` has
// n/2+1 entries (1D) or n1*(n2/2+1) entries (2D); inverses are normalized.
void forward1d_real(std::span<const double> in, std::span<cplx> spectrum);
void inverse1d_real(std::span<const cplx> spectrum, std::span<double> out);
void forward2d_real(std::span<const double> in, std::span<cplx> spectrum,
                    std::size_t n1, std::size_t n2);
void inverse2d_real(std::span<const cplx> spectrum, std::span<double> out,
                    std::size_t n1, std::size_t n2);

// Signed frequency of DFT index i on an n-point grid, in (-n/2, n/2].
inline long signed_frequency(std::size_t i, std::size_t n) {
  const long k = static_cast<long>(i);
  const long nn = static_cast<long>(n);
  return (2 * k > nn) ? k - nn : k;
}

// Fault injection for the self-verification negative control: scales every
// complex inverse transform by `factor`. 1.0 restores correct behaviour.
void set_inverse_scale_fault(double factor);
double inverse_scale_fault();

}  // namespace dynformer::fft
