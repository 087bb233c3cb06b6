#include "dynformer/spectral.hpp"

#include <cmath>
#include <cstdlib>

#include "dynformer/cost.hpp"
#include "dynformer/error.hpp"
#include "dynformer/fft.hpp"

namespace dynformer {

namespace {

using fft::cplx;

struct GridDims {
  std::size_t batch, n1, n2, channels;
  std::size_t points() const { return n1 * n2; }
};

GridDims real_dims(const Shape& s, const char* what) {
  if (s.size() < 3) {
    throw DimensionError(std::string(what) + ": expected [..., N1, N2, C], got " +
                         to_string(s));
  }
  const std::size_t r = s.size();
  GridDims d{1, s[r - 3], s[r - 2], s[r - 1]};
  for (std::size_t i = 0; i + 3 < r; ++i) d.batch *= s[i];
  if (d.n1 == 0 || d.n2 == 0 || d.channels == 0) {
    throw DimensionError(std::string(what) + ": extents must be positive, got " +
                         to_string(s));
  }
  return d;
}

GridDims complex_dims(const Shape& s, const char* what) {
  if (s.size() < 4 || s.back() != 2) {
    throw DimensionError(std::string(what) + ": expected complex [..., N1, N2, C, 2], got " +
                         to_string(s));
  }
  return real_dims(Shape(s.begin(), s.end() - 1), what);
}

std::span<const cplx> as_complex(const Tensor& t) {
  return {reinterpret_cast<const cplx*>(t.data().data()), t.size() / 2};
}
std::span<cplx> as_complex(Tensor& t) {
  return {reinterpret_cast<cplx*>(t.data().data()), t.size() / 2};
}

std::uint64_t fft_cost(const GridDims& d) {
  const double n = static_cast<double>(d.points());
  return static_cast<std::uint64_t>(d.batch * d.channels * n * std::max(1.0, std::log2(n)));
}

Tensor fft_real_forward(const Tensor& x, const GridDims& d) {
  std::vector<cplx> in(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) in[i] = x[i];
  Shape os = x.shape();
  os.push_back(2);
  Tensor out(os);
  fft::forward2d(in, as_complex(out), d.batch, d.n1, d.n2, d.channels);
  return out;
}

Tensor fft_complex(const Tensor& z, const GridDims& d, bool inverse) {
  Tensor out(z.shape());
  if (inverse) {
    fft::inverse2d(as_complex(z), as_complex(out), d.batch, d.n1, d.n2, d.channels);
  } else {
    fft::forward2d(as_complex(z), as_complex(out), d.batch, d.n1, d.n2, d.channels);
  }
  return out;
}

// Retained-mask per axis.
std::vector<char> axis_mask(std::size_t m, std::size_t n) {
  std::vector<char> keep(n);
  for (std::size_t i = 0; i < n; ++i) keep[i] = ModeSet::index_retained(i, m, n);
  return keep;
}

}  // namespace

// ---- ModeSet ---------------------------------------------------------------------

void ModeSet::validate_for(std::size_t n1, std::size_t n2) const {
  if (m1 < 1 || m2 < 1 || m1 > n1 || m2 > n2) {
    throw DimensionError("mode set (" + std::to_string(m1) + ", " + std::to_string(m2) +
                         ") does not fit grid " + std::to_string(n1) + " x " +
                         std::to_string(n2));
  }
}

std::size_t ModeSet::slot_index(std::size_t slot, std::size_t m, std::size_t n) {
  const std::size_t low = (m + 1) / 2;
  return slot < low ? slot : n - m + slot;
}

bool ModeSet::index_retained(std::size_t index, std::size_t m, std::size_t n) {
  if (m >= n) return true;
  const long half = static_cast<long>((m + 1) / 2) - 1;
  return std::labs(fft::signed_frequency(index, n)) <= half;
}

// ---- differentiable transforms -------------------------------------------------

Var fft2(Var x) {
  const GridDims d = real_dims(x.shape(), "fft2");
  count_mulacc(CostCategory::kSpectral, fft_cost(d));
  return x.tape().record(fft_real_forward(x.value(), d), {x}, [x, d](Tape& t, const Tensor& g) {
    // d/dx of a real input: Re(F^H g) = Re(N * ifft(g)).
    Tensor back = fft_complex(g, d, /*inverse=*/true);
    const double n = static_cast<double>(d.points());
    Tensor& acc = t.grad_accumulator(x);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += n * back[2 * i];
  });
}

Var ifft2(Var z) {
  const GridDims d = complex_dims(z.shape(), "ifft2");
  count_mulacc(CostCategory::kSpectral, fft_cost(d));
  return z.tape().record(fft_complex(z.value(), d, true), {z}, [z, d](Tape& t, const Tensor& g) {
    // Adjoint of (1/N) F^H is (1/N) F.
    Tensor fwd = fft_complex(g, d, /*inverse=*/false);
    const double inv = 1.0 / static_cast<double>(d.points());
    Tensor& acc = t.grad_accumulator(z);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += inv * fwd[i];
  });
}

Var real_part(Var z) {
  complex_dims(z.shape(), "real_part");
  Shape os(z.shape().begin(), z.shape().end() - 1);
  Tensor out(os);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z.value()[2 * i];
  return z.tape().record(std::move(out), {z}, [z](Tape& t, const Tensor& g) {
    Tensor& acc = t.grad_accumulator(z);
    for (std::size_t i = 0; i < g.size(); ++i) acc[2 * i] += g[i];
  });
}

Var mask_modes(Var z, const ModeSet& modes) {
  const GridDims d = complex_dims(z.shape(), "mask_modes");
  modes.validate_for(d.n1, d.n2);
  const auto k1 = axis_mask(modes.m1, d.n1);
  const auto k2 = axis_mask(modes.m2, d.n2);
  // Element-wise keep flags for one grid; shared by forward and backward.
  std::vector<char> keep(d.points());
  for (std::size_t i = 0; i < d.n1; ++i) {
    for (std::size_t j = 0; j < d.n2; ++j) keep[i * d.n2 + j] = k1[i] && k2[j];
  }
  auto apply = [d, keep](const Tensor& src, Tensor& dst, bool accumulate) {
    const std::size_t per_point = 2 * d.channels;
    for (std::size_t b = 0; b < d.batch; ++b) {
      for (std::size_t p = 0; p < d.points(); ++p) {
        if (!keep[p]) continue;
        const std::size_t off = (b * d.points() + p) * per_point;
        for (std::size_t c = 0; c < per_point; ++c) {
          if (accumulate) {
            dst[off + c] += src[off + c];
          } else {
            dst[off + c] = src[off + c];
          }
        }
      }
    }
  };
  Tensor out(z.shape());
  apply(z.value(), out, false);
  return z.tape().record(std::move(out), {z}, [z, apply](Tape& t, const Tensor& g) {
    apply(g, t.grad_accumulator(z), true);
  });
}

Var spectral_mix(Var z, Var kernel, const ModeSet& modes) {
  const GridDims d = complex_dims(z.shape(), "spectral_mix");
  modes.validate_for(d.n1, d.n2);
  const Shape& ks = kernel.shape();
  if (ks.size() != 5 || ks[0] != d.channels || ks[2] != modes.m1 || ks[3] != modes.m2 ||
      ks[4] != 2) {
    throw DimensionError("spectral_mix: kernel shape " + to_string(ks) +
                         " incompatible with input " + to_string(z.shape()) + " and modes (" +
                         std::to_string(modes.m1) + ", " + std::to_string(modes.m2) + ")");
  }
  if (&kernel.tape() != &z.tape()) throw ValidationError("spectral_mix: tapes differ");
  const std::size_t cin = ks[0], cout = ks[1];

  // Active (slot1, slot2, grid point) triples.
  struct Slot { std::size_t s1, s2, point; };
  std::vector<Slot> slots;
  for (std::size_t s1 = 0; s1 < modes.m1; ++s1) {
    const std::size_t i1 = ModeSet::slot_index(s1, modes.m1, d.n1);
    if (!ModeSet::index_retained(i1, modes.m1, d.n1)) continue;
    for (std::size_t s2 = 0; s2 < modes.m2; ++s2) {
      const std::size_t i2 = ModeSet::slot_index(s2, modes.m2, d.n2);
      if (!ModeSet::index_retained(i2, modes.m2, d.n2)) continue;
      slots.push_back({s1, s2, i1 * d.n2 + i2});
    }
  }

  Shape os = z.shape();
  os[os.size() - 2] = cout;
  Tensor out(os);
  {
    const auto zin = as_complex(z.value());
    const auto w = as_complex(kernel.value());
    auto o = as_complex(out);
    for (std::size_t b = 0; b < d.batch; ++b) {
      for (const Slot& sl : slots) {
        const cplx* zp = zin.data() + (b * d.points() + sl.point) * cin;
        cplx* op = o.data() + (b * d.points() + sl.point) * cout;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const cplx* wrow = w.data() + ((ci * cout) * modes.m1 + sl.s1) * modes.m2 + sl.s2;
          const std::size_t wstride = modes.m1 * modes.m2;
          for (std::size_t co = 0; co < cout; ++co) op[co] += wrow[co * wstride] * zp[ci];
        }
      }
    }
  }
  count_mulacc(CostCategory::kSpectral, 4 * d.batch * slots.size() * cin * cout);

  return z.tape().record(
      std::move(out), {z, kernel},
      [z, kernel, d, slots, cin, cout, modes](Tape& t, const Tensor& g) {
        const auto gc = as_complex(g);
        const std::size_t wstride = modes.m1 * modes.m2;
        if (t.requires_grad(z)) {
          const auto w = as_complex(t.value(kernel));
          auto gz = as_complex(t.grad_accumulator(z));
          for (std::size_t b = 0; b < d.batch; ++b) {
            for (const Slot& sl : slots) {
              const cplx* gp = gc.data() + (b * d.points() + sl.point) * cout;
              cplx* zp = gz.data() + (b * d.points() + sl.point) * cin;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const cplx* wrow = w.data() + ((ci * cout) * modes.m1 + sl.s1) * modes.m2 + sl.s2;
                cplx acc = 0.0;
                for (std::size_t co = 0; co < cout; ++co) acc += std::conj(wrow[co * wstride]) * gp[co];
                zp[ci] += acc;
              }
            }
          }
        }
        if (t.requires_grad(kernel)) {
          const auto zin = as_complex(t.value(z));
          auto gw = as_complex(t.grad_accumulator(kernel));
          for (std::size_t b = 0; b < d.batch; ++b) {
            for (const Slot& sl : slots) {
              const cplx* gp = gc.data() + (b * d.points() + sl.point) * cout;
              const cplx* zp = zin.data() + (b * d.points() + sl.point) * cin;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                cplx* wrow = gw.data() + ((ci * cout) * modes.m1 + sl.s1) * modes.m2 + sl.s2;
                const cplx zc = std::conj(zp[ci]);
                for (std::size_t co = 0; co < cout; ++co) wrow[co * wstride] += zc * gp[co];
              }
            }
          }
        }
      });
}

// ---- projections and embedding -------------------------------------------------

Var project_large_scale(Var u, const ModeSet& modes) {
  const GridDims d = real_dims(u.shape(), "project_large_scale");
  modes.validate_for(d.n1, d.n2);
  return real_part(ifft2(mask_modes(fft2(u), modes)));
}

Var project_small_scale(Var u, const ModeSet& modes) {
  return sub(u, project_large_scale(u, modes));
}

Var spectral_embed(Var u, Var kernel, const ModeSet& modes) {
  const GridDims d = real_dims(u.shape(), "spectral_embed");
  modes.validate_for(d.n1, d.n2);
  if (kernel.shape().empty() || kernel.shape()[0] != d.channels) {
    throw DimensionError("spectral_embed: input has " + std::to_string(d.channels) +
                         " channels, kernel shape is " + to_string(kernel.shape()));
  }
  return real_part(ifft2(spectral_mix(fft2(u), kernel, modes)));
}

Tensor project_large_scale(const Tensor& u, const ModeSet& modes) {
  Tape tape;
  return project_large_scale(tape.constant(u), modes).value();
}

Tensor project_small_scale(const Tensor& u, const ModeSet& modes) {
  Tape tape;
  return project_small_scale(tape.constant(u), modes).value();
}

Tensor spectral_embed(const Tensor& u, const Tensor& kernel, const ModeSet& modes) {
  Tape tape;
  return spectral_embed(tape.constant(u), tape.constant(kernel), modes).value();
}

Parameter make_spectral_kernel(std::string name, std::size_t d_in, std::size_t d_out,
                               const ModeSet& modes, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d_in * d_out)));
  Tensor w({d_in, d_out, modes.m1, modes.m2, 2});
  for (double& v : w.data()) v = normal(rng);
  return Parameter(std::move(name), std::move(w));
}

}  // namespace dynformer
