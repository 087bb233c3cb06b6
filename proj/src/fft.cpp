#include "dynformer/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "dynformer/error.hpp"

namespace dynformer::fft {

namespace {

enum class Kind { kForward2d, kInverse2d, kR2c1d, kC2r1d, kR2c2d, kC2r2d };

using PlanKey = std::tuple<Kind, std::size_t, std::size_t, std::size_t>;

// FFTW's planner is not thread-safe; execution of an existing plan is.
std::mutex g_planner_mutex;
std::map<PlanKey, fftw_plan> g_plans;
double g_inverse_fault = 1.0;

fftw_complex* as_fftw(cplx* p) { return reinterpret_cast<fftw_complex*>(p); }
fftw_complex* as_fftw(const cplx* p) {
  return reinterpret_cast<fftw_complex*>(const_cast<cplx*>(p));
}

constexpr unsigned kFlags = FFTW_ESTIMATE | FFTW_UNALIGNED;

fftw_plan plan_for(Kind kind, std::size_t n1, std::size_t n2, std::size_t channels) {
  std::lock_guard lock(g_planner_mutex);
  const PlanKey key{kind, n1, n2, channels};
  if (auto it = g_plans.find(key); it != g_plans.end()) return it->second;

  const int dims[2] = {static_cast<int>(n1), static_cast<int>(n2)};
  fftw_plan plan = nullptr;
  switch (kind) {
    case Kind::kForward2d:
    case Kind::kInverse2d: {
      std::vector<cplx> a(n1 * n2 * channels), b(n1 * n2 * channels);
      const int c = static_cast<int>(channels);
      plan = fftw_plan_many_dft(2, dims, c, as_fftw(a.data()), nullptr, c, 1,
                                as_fftw(b.data()), nullptr, c, 1,
                                kind == Kind::kForward2d ? FFTW_FORWARD : FFTW_BACKWARD,
                                kFlags);
      break;
    }
    case Kind::kR2c1d: {
      std::vector<double> a(n1);
      std::vector<cplx> b(n1 / 2 + 1);
      plan = fftw_plan_dft_r2c_1d(dims[0], a.data(), as_fftw(b.data()), kFlags);
      break;
    }
    case Kind::kC2r1d: {
      std::vector<cplx> a(n1 / 2 + 1);
      std::vector<double> b(n1);
      plan = fftw_plan_dft_c2r_1d(dims[0], as_fftw(a.data()), b.data(), kFlags);
      break;
    }
    case Kind::kR2c2d: {
      std::vector<double> a(n1 * n2);
      std::vector<cplx> b(n1 * (n2 / 2 + 1));
      plan = fftw_plan_dft_r2c_2d(dims[0], dims[1], a.data(), as_fftw(b.data()), kFlags);
      break;
    }
    case Kind::kC2r2d: {
      std::vector<cplx> a(n1 * (n2 / 2 + 1));
      std::vector<double> b(n1 * n2);
      plan = fftw_plan_dft_c2r_2d(dims[0], dims[1], as_fftw(a.data()), b.data(), kFlags);
      break;
    }
  }
  if (plan == nullptr) throw NumericalError("FFTW failed to create a plan");
  g_plans.emplace(key, plan);
  return plan;
}

void check_extents(std::size_t have, std::size_t want, const char* what) {
  if (have != want) {
    throw DimensionError(std::string(what) + ": buffer holds " + std::to_string(have) +
                         " entries, expected " + std::to_string(want));
  }
}

void transform2d(Kind kind, std::span<const cplx> in, std::span<cplx> out,
                 std::size_t batch, std::size_t n1, std::size_t n2,
                 std::size_t channels) {
  if (n1 == 0 || n2 == 0 || channels == 0) {
    throw DimensionError("fft2: extents must be positive");
  }
  const std::size_t per = n1 * n2 * channels;
  check_extents(in.size(), batch * per, "fft2 input");
  check_extents(out.size(), batch * per, "fft2 output");
  fftw_plan plan = plan_for(kind, n1, n2, channels);
  for (std::size_t b = 0; b < batch; ++b) {
    fftw_execute_dft(plan, as_fftw(in.data() + b * per), as_fftw(out.data() + b * per));
  }
}

}  // namespace

void forward2d(std::span<const cplx> in, std::span<cplx> out, std::size_t batch,
               std::size_t n1, std::size_t n2, std::size_t channels) {
  transform2d(Kind::kForward2d, in, out, batch, n1, n2, channels);
}

void inverse2d(std::span<const cplx> in, std::span<cplx> out, std::size_t batch,
               std::size_t n1, std::size_t n2, std::size_t channels) {
  transform2d(Kind::kInverse2d, in, out, batch, n1, n2, channels);
  const double scale = g_inverse_fault / static_cast<double>(n1 * n2);
  for (cplx& z : out) z *= scale;
}

void forward1d_real(std::span<const double> in, std::span<cplx> spectrum) {
  check_extents(spectrum.size(), in.size() / 2 + 1, "rfft");
  std::vector<double> tmp(in.begin(), in.end());
  fftw_execute_dft_r2c(plan_for(Kind::kR2c1d, in.size(), 1, 1), tmp.data(),
                       as_fftw(spectrum.data()));
}

void inverse1d_real(std::span<const cplx> spectrum, std::span<double> out) {
  check_extents(spectrum.size(), out.size() / 2 + 1, "irfft");
  // c2r destroys its input.
  std::vector<cplx> tmp(spectrum.begin(), spectrum.end());
  fftw_execute_dft_c2r(plan_for(Kind::kC2r1d, out.size(), 1, 1), as_fftw(tmp.data()),
                       out.data());
  const double scale = 1.0 / static_cast<double>(out.size());
  for (double& v : out) v *= scale;
}

void forward2d_real(std::span<const double> in, std::span<cplx> spectrum,
                    std::size_t n1, std::size_t n2) {
  check_extents(in.size(), n1 * n2, "rfft2 input");
  check_extents(spectrum.size(), n1 * (n2 / 2 + 1), "rfft2 output");
  std::vector<double> tmp(in.begin(), in.end());
  fftw_execute_dft_r2c(plan_for(Kind::kR2c2d, n1, n2, 1), tmp.data(),
                       as_fftw(spectrum.data()));
}

void inverse2d_real(std::span<const cplx> spectrum, std::span<double> out,
                    std::size_t n1, std::size_t n2) {
  check_extents(out.size(), n1 * n2, "irfft2 output");
  check_extents(spectrum.size(), n1 * (n2 / 2 + 1), "irfft2 input");
  std::vector<cplx> tmp(spectrum.begin(), spectrum.end());
  fftw_execute_dft_c2r(plan_for(Kind::kC2r2d, n1, n2, 1), as_fftw(tmp.data()),
                       out.data());
  const double scale = 1.0 / static_cast<double>(n1 * n2);
  for (double& v : out) v *= scale;
}

void set_inverse_scale_fault(double factor) { g_inverse_fault = factor; }
double inverse_scale_fault() { return g_inverse_fault; }

}  // namespace dynformer::fft
