#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dynformer/cost.hpp"
#include "dynformer/dataset.hpp"
#include "dynformer/model.hpp"

namespace dynformer {

// ---- normalization ------------------------------------------------------

struct NormStats {
  std::vector<double> u_min, u_max;  // per channel

  void validate() const;
  std::size_t channels() const { return u_min.size(); }
  // Order-sensitive hash of the raw bits; detects any drift during a run.
  std::uint64_t checksum() const;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

// Statistics for the model input and target fields. Evolutionary benchmarks
// feed predictions back as inputs, so both sides share one set taken over the
// input and target windows together.
struct NormPair {
  NormStats input, target;
};

// Extrema over the given samples only.
NormPair compute_norm_stats(const TrajectoryDataset& data, const std::vector<std::size_t>& indices);

// u has the channel on axis 0 ([C, ...]).
Tensor minmax_normalize(const Tensor& u, const NormStats& stats);
Tensor minmax_denormalize(const Tensor& u, const NormStats& stats);

// ---- metrics ------------------------------------------------------------

// Mean over samples (axis 0 when per_sample, otherwise the whole tensor is one
// sample) of ||pred - truth||^2 / ||truth||^2.
double relative_mse(const Tensor& pred, const Tensor& truth, bool per_sample = true);
std::vector<double> relative_mse_per_sample(const Tensor& pred, const Tensor& truth);

double log_minmax_score(double eps, double eps_min, double eps_max);
// Scores a list against its own minimum and maximum.
std::vector<double> log_minmax_scores(const std::vector<double>& eps);

// ---- optimization -------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  // Decoupled weight decay followed by the bias-corrected adaptive update.
  // State is keyed by position; the parameter list must not change shape.
  void step(std::deque<Parameter>& params, double lr);
  void step(std::vector<Parameter*> params, double lr);
  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

double steplr(double lr0, double gamma, std::size_t step_size, std::size_t epoch);

// ---- model I/O layout -----------------------------------------------------
// A window [C, T, S1, S2] enters the model as [S1, S2, C * T] with channel
// index c * T + t; a single output frame [S1, S2, C] maps back to [C, 1, S1, S2].

Tensor window_to_model(const Tensor& window);
Tensor model_to_frame(const Tensor& out, std::size_t channels);
std::size_t model_input_width(const TrajectoryDataset& data);

// ---- rollout --------------------------------------------------------------

// Maps a window [C, T_in, S1, S2] to the next frame [C, 1, S1, S2].
using StepFn = std::function<Tensor(const Tensor& window)>;

// [C, steps, S1, S2]. Each prediction is appended and the window shifted.
Tensor rollout_autoregressive(const StepFn& step, const Tensor& window, std::size_t steps);
Tensor rollout_autoregressive(const StepFn& step, const Tensor& window, std::size_t steps,
                              Benchmark benchmark);

// Repeats the last frame of the window (the persistence baseline).
StepFn persistence_step();

// Runs the model on a physical-unit window; normalization is applied around
// the network.
StepFn model_step(DynFormer& model, const NormPair& norm);

// ---- training -------------------------------------------------------------

struct TrainOptions {
  std::size_t epochs = 200;
  std::size_t batch_size = 8;
  AdamWConfig optimizer;
  double gamma = 0.97;
  std::size_t step_size = 7;
  std::uint64_t seed = 123;
  // Worker threads for test evaluation (0 = hardware concurrency).
  std::size_t eval_workers = 0;
  // One-step pairs per trajectory: every shift of the window through the
  // target horizon, or only the first.
  bool all_windows = true;
  // Test evaluation every k epochs (the last epoch is always evaluated);
  // skipped epochs repeat the previous value.
  std::size_t eval_every = 1;
};

struct TrainRecord;
// Checked after every epoch; returning true ends training early.
using StopRule = std::function<bool(const std::vector<TrainRecord>&)>;

struct TrainRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double test_eps = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  std::uint64_t mulacc = 0;  // one forward pass on one sample
  std::size_t params = 0;
};

struct Split {
  std::vector<std::size_t> train, test;
};

// The first n_train samples train, the next n_test evaluate.
Split make_split(std::size_t total, std::size_t n_train, std::size_t n_test);

struct TrainResult {
  std::vector<TrainRecord> records;
  NormPair norm;
};

using EpochCallback = std::function<void(const TrainRecord&)>;

// d_in and d_out of the model must match the dataset layout.
TrainResult train(DynFormer& model, const TrajectoryDataset& data, const Split& split,
                  const TrainOptions& opts, const EpochCallback& on_epoch = {},
                  const StopRule& stop = {});

// Mean test relative MSE in physical units of autoregressive rollouts over
// each sample's full target horizon.
std::vector<double> evaluate_per_sample(const StepFn& step, const TrajectoryDataset& data,
                                        const std::vector<std::size_t>& indices,
                                        std::size_t workers = 0);
double evaluate(const StepFn& step, const TrajectoryDataset& data,
                const std::vector<std::size_t>& indices, std::size_t workers = 0);

// ---- cost accounting ------------------------------------------------------

struct CostReport {
  std::size_t params = 0;
  CostTally mulacc;
};

// Parameter count by enumeration and the multiply-adds of one forward pass on
// a single [s1, s2] sample.
CostReport cost_account(const ModelConfig& cfg, std::size_t s1, std::size_t s2);

}  // namespace dynformer
