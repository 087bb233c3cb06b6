#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dynformer/tensor.hpp"

namespace dynformer {

enum class Benchmark : std::uint32_t { kKs = 0, kDarcy = 1, kNs = 2, kSw = 3 };

std::string to_string(Benchmark b);
// Accepts 1dks, 2ddarcy, 2dns, 3dsw.
Benchmark parse_benchmark(const std::string& s);
// Darcy maps parameters to a solution; the others evolve a state in time.
bool is_evolutionary(Benchmark b);

// One supervised pair. input is [C, T_in, S1, S2], target is [C, T_out, S1, S2];
// one-dimensional data uses S2 = 1.
struct TrajectorySample {
  Tensor input;
  Tensor target;
};

enum class StorageType : std::uint32_t { kFloat32 = 1, kFloat64 = 2 };

struct TrajectoryDataset {
  Benchmark benchmark = Benchmark::kKs;
  std::size_t channels = 1, t_in = 1, t_out = 1, s1 = 1, s2 = 1;
  std::vector<TrajectorySample> samples;
  // Per-channel extrema over all samples.
  std::vector<double> in_min, in_max, out_min, out_max;

  // Throws ValidationError when shapes disagree with the header fields or
  // with the benchmark's channel and window conventions.
  void validate() const;
  void compute_extrema();
};

// Little-endian container: magic "DFTRAJ01", benchmark, storage type, sample
// count, C, T_in, T_out, S1, S2, per-channel extrema, then each sample's
// input block followed by its target block. Float32 storage rounds values.
void save_trajectories(const TrajectoryDataset& data, const std::filesystem::path& path,
                       StorageType storage = StorageType::kFloat32);
TrajectoryDataset load_trajectories(const std::filesystem::path& path);

// Runs fn(0..count-1) across worker threads; results must be written by
// index so ordering never depends on completion order.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn,
                  std::size_t workers = 0);

}  // namespace dynformer
