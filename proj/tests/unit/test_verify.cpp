#include "doctest.h"
#include "dynformer/fft.hpp"
#include "dynformer/verify.hpp"

using namespace dynformer;

TEST_CASE("fast verification criteria pass") {
  for (int id : {2, 3, 6, 9, 10}) {
    const verify::CriterionReport r = verify::run_criterion(id);
    INFO(verify::format_report(r));
    CHECK(r.passed());
  }
}

TEST_CASE("corrupted inverse FFT normalization is caught") {
  CHECK(verify::fft_round_trip_check().passed);
  fft::set_inverse_scale_fault(1.0 + 1e-6);
  const verify::Check bad = verify::fft_round_trip_check();
  const verify::CriterionReport r = verify::run_criterion(2);
  fft::set_inverse_scale_fault(1.0);
  CHECK_FALSE(bad.passed);
  CHECK(bad.measured > 1e-12);
  CHECK_FALSE(r.passed());
  CHECK(verify::format_report(r).find("FAIL") != std::string::npos);
  CHECK(verify::fft_round_trip_check().passed);
}

TEST_CASE("unknown criterion is reported as a failure") {
  const verify::CriterionReport r = verify::run_criterion(99);
  CHECK_FALSE(r.passed());
  CHECK(!r.note.empty());
}
