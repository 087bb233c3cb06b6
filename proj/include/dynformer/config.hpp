#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dynformer/dataset.hpp"
#include "dynformer/harness.hpp"
#include "dynformer/model.hpp"

namespace dynformer {

// Everything needed to reproduce a training run.
struct RunConfig {
  Benchmark benchmark = Benchmark::kDarcy;
  std::string preset;    // informational; empty for hand-written configs
  std::string dataset;   // container path
  std::string dataset_checksum;  // checked against the file when non-empty
  std::size_t n_train = 32;
  std::size_t n_test = 8;
  std::string out_dir = "runs/default";
  ModelConfig model;
  TrainOptions train;

  // Throws ValidationError listing every invalid field.
  void validate() const;
};

// INI text with [run], [model], [ablation] and [optimizer] sections. Floating
// values are written with 17 significant digits so a reload is bit-exact.
std::string to_ini(const RunConfig& cfg);
// Keys missing from the text keep the values of `base` (or of the preset named
// by run.preset); unknown keys and unparsable values are reported together.
RunConfig parse_run_config(const std::string& ini_text);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

// Named presets "<benchmark>-<size>" with size tiny, medium or large, e.g.
// "2ddarcy-tiny". Model shapes follow the reference settings table; dataset
// sizes and epochs are desk scale. A "-full" suffix selects the reference
// protocol (500 epochs, batch 64, 1000/200 split).
RunConfig run_preset(const std::string& name);
std::vector<std::string> run_preset_names();

// Dataset generation at "smoke", "desk" or "full" scale. Shallow water has
// no generator and is rejected with a pointer to the container loader.
TrajectoryDataset generate_dataset(Benchmark benchmark, const std::string& scale, std::uint64_t seed);

// FNV-1a of the file bytes as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);

// ---- checkpoints ------------------------------------------------------------

struct Checkpoint {
  RunConfig config;
  NormPair norm;
  std::unique_ptr<DynFormer> model;
};

// Magic "DFCKPT01", u64 manifest length, INI manifest (run config plus
// normalization statistics), u64 tensor count, then per tensor: u64 name
// length, name, u64 element count, float64 values.
void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const NormPair& norm,
                     const DynFormer& model);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Metrics CSV (deterministic columns) and a separate wall-clock CSV.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<TrainRecord>& records);
void write_timing_csv(const std::filesystem::path& path, const std::vector<TrainRecord>& records);

// ---- runs -------------------------------------------------------------------

struct RunOutputs {
  std::vector<TrainRecord> records;
  NormPair norm;
  std::unique_ptr<DynFormer> model;
};

// Loads cfg.dataset (verifying dataset_checksum when set), trains a model
// seeded with cfg.train.seed and, when write_outputs is set, writes
// metrics.csv, timing.csv, checkpoint.bin and manifest.ini into cfg.out_dir.
// The manifest records the dataset checksum, so training from it repeats the
// run exactly.
RunOutputs execute_run(RunConfig cfg, const EpochCallback& on_epoch = {}, bool write_outputs = true);

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace dynformer
