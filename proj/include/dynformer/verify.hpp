#pragma once

#include <functional>
#include <string>
#include <vector>

namespace dynformer::verify {

// One measured quantity compared against its tolerance.
struct Check {
  std::string name;
  double measured = 0.0;
  std::string bound;  // human-readable, e.g. "< 1e-10"
  bool passed = false;
};

struct CriterionReport {
  int id = 0;
  std::string title;
  std::vector<Check> checks;
  double seconds = 0.0;
  std::string note;  // error text when a check could not run

  bool passed() const;
};

// Acceptance criteria 1..11. Each runs independently and never throws: an
// exception is reported as a failed check carrying its message.
CriterionReport run_criterion(int id);
std::vector<int> all_criteria();
// The invariant suite behind `dynformer verify`: everything except the
// training runs (criteria 8 and 11).
std::vector<int> invariant_criteria();

// Forward/inverse transform round trip on random fields; fails when the
// inverse normalization is corrupted.
Check fft_round_trip_check();

// One summary line, then one indented line per check.
std::string format_report(const CriterionReport& r);

using Progress = std::function<void(const CriterionReport&)>;
// Runs the listed criteria in order, reporting each as it finishes; returns
// true when all pass.
bool run_suite(const std::vector<int>& ids, const Progress& on_done);

}  // namespace dynformer::verify
