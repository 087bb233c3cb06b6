#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace dynformer {

// Multiply-add instrumentation. Differentiable operations add their
// forward-pass multiply-add count to a per-thread counter; backward passes
// are not counted.
enum class CostCategory : std::size_t {
  kPointwise = 0,     // affine layers, activations, elementwise products
  kSpectral,          // FFTs and spectral channel mixing
  kAttentionCore,     // kernel construction and kernel application
  kReduction,         // axis means, sums, losses
  kCount
};

std::string_view category_name(CostCategory c);

struct CostTally {
  std::array<std::uint64_t, static_cast<std::size_t>(CostCategory::kCount)> by_category{};

  std::uint64_t total() const;
  std::uint64_t operator[](CostCategory c) const {
    return by_category[static_cast<std::size_t>(c)];
  }
};

void count_mulacc(CostCategory c, std::uint64_t n);

// Captures everything counted on this thread during its lifetime. Scopes nest;
// an inner scope's counts are also visible to the enclosing one.
class CostScope {
 public:
  CostScope();
  ~CostScope();
  CostScope(const CostScope&) = delete;
  CostScope& operator=(const CostScope&) = delete;

  CostTally tally() const;

 private:
  CostTally start_;
};

}  // namespace dynformer
