#include "dynformer/cost.hpp"

#include <numeric>

namespace dynformer {

namespace {
thread_local CostTally g_running;
}  // namespace

std::string_view category_name(CostCategory c) {
  switch (c) {
    case CostCategory::kPointwise: return "pointwise";
    case CostCategory::kSpectral: return "spectral";
    case CostCategory::kAttentionCore: return "attention_core";
    case CostCategory::kReduction: return "reduction";
    default: return "unknown";
  }
}

std::uint64_t CostTally::total() const {
  return std::accumulate(by_category.begin(), by_category.end(), std::uint64_t{0});
}

void count_mulacc(CostCategory c, std::uint64_t n) {
  g_running.by_category[static_cast<std::size_t>(c)] += n;
}

CostScope::CostScope() : start_(g_running) {}

CostScope::~CostScope() = default;

CostTally CostScope::tally() const {
  CostTally out;
  for (std::size_t i = 0; i < out.by_category.size(); ++i) {
    out.by_category[i] = g_running.by_category[i] - start_.by_category[i];
  }
  return out;
}

}  // namespace dynformer
