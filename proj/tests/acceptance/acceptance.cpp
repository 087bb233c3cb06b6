// Runs every acceptance criterion and prints one PASS/FAIL line per criterion
// followed by its measured values. Exit status is non-zero if any fails.
//
//   acceptance            all criteria
//   acceptance 2 5 9      selected criteria

#include <cstdio>
#include <cstdlib>
#include <vector>

#include "dynformer/verify.hpp"

int main(int argc, char** argv) {
  namespace v = dynformer::verify;
  std::vector<int> ids;
  for (int i = 1; i < argc; ++i) ids.push_back(std::atoi(argv[i]));
  if (ids.empty()) ids = v::all_criteria();

  int failed = 0;
  v::run_suite(ids, [&](const v::CriterionReport& r) {
    std::fputs(v::format_report(r).c_str(), stdout);
    std::fflush(stdout);
    failed += !r.passed();
  });
  std::printf("acceptance: %zu of %zu criteria passed\n", ids.size() - failed, ids.size());
  return failed == 0 ? 0 : 1;
}
