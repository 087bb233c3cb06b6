#include "dynformer/harness.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "dynformer/error.hpp"

namespace dynformer {

// ---- normalization ------------------------------------------------------

void NormStats::validate() const {
  if (u_min.empty() || u_min.size() != u_max.size()) {
    throw ValidationError("NormStats: need matching non-empty per-channel extrema");
  }
  for (std::size_t c = 0; c < u_min.size(); ++c) {
    if (!(u_max[c] > u_min[c])) {
      throw ValidationError("NormStats: channel " + std::to_string(c) +
                            " is degenerate (u_max == u_min)");
    }
  }
}

std::uint64_t NormStats::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  for (double v : u_min) mix(v);
  for (double v : u_max) mix(v);
  return h;
}

namespace {

void extend(NormStats& s, const Tensor& u) {
  const std::size_t channels = s.u_min.size();
  const std::size_t block = u.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = c * block; i < (c + 1) * block; ++i) {
      s.u_min[c] = std::min(s.u_min[c], u[i]);
      s.u_max[c] = std::max(s.u_max[c], u[i]);
    }
  }
}

NormStats empty_stats(std::size_t channels) {
  return {std::vector<double>(channels, std::numeric_limits<double>::infinity()),
          std::vector<double>(channels, -std::numeric_limits<double>::infinity())};
}

void check_channels(const Tensor& u, const NormStats& stats) {
  stats.validate();
  if (u.rank() == 0 || u.extent(0) != stats.channels()) {
    throw DimensionError("normalize: leading axis of " + to_string(u.shape()) +
                         " must hold " + std::to_string(stats.channels()) + " channels");
  }
}

}  // namespace

NormPair compute_norm_stats(const TrajectoryDataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ValidationError("normalization needs at least one sample");
  NormPair out{empty_stats(data.channels), empty_stats(data.channels)};
  for (std::size_t i : indices) {
    extend(out.input, data.samples.at(i).input);
    extend(out.target, data.samples.at(i).target);
  }
  if (is_evolutionary(data.benchmark)) {
    for (std::size_t c = 0; c < data.channels; ++c) {
      out.input.u_min[c] = std::min(out.input.u_min[c], out.target.u_min[c]);
      out.input.u_max[c] = std::max(out.input.u_max[c], out.target.u_max[c]);
    }
    out.target = out.input;
  }
  out.input.validate();
  out.target.validate();
  return out;
}

Tensor minmax_normalize(const Tensor& u, const NormStats& stats) {
  check_channels(u, stats);
  Tensor out = u;
  const std::size_t block = u.size() / stats.channels();
  for (std::size_t c = 0; c < stats.channels(); ++c) {
    const double lo = stats.u_min[c], range = stats.u_max[c] - stats.u_min[c];
    for (std::size_t i = c * block; i < (c + 1) * block; ++i) out[i] = (u[i] - lo) / range;
  }
  return out;
}

Tensor minmax_denormalize(const Tensor& u, const NormStats& stats) {
  check_channels(u, stats);
  Tensor out = u;
  const std::size_t block = u.size() / stats.channels();
  for (std::size_t c = 0; c < stats.channels(); ++c) {
    const double lo = stats.u_min[c], range = stats.u_max[c] - stats.u_min[c];
    for (std::size_t i = c * block; i < (c + 1) * block; ++i) out[i] = u[i] * range + lo;
  }
  return out;
}

// ---- metrics ------------------------------------------------------------

std::vector<double> relative_mse_per_sample(const Tensor& pred, const Tensor& truth) {
  require_same_shape(pred.shape(), truth.shape(), "relative_mse");
  if (truth.rank() == 0 || truth.size() == 0) throw DimensionError("relative_mse: empty input");
  const std::size_t samples = truth.extent(0);
  const std::size_t block = truth.size() / samples;
  std::vector<double> out(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = s * block; i < (s + 1) * block; ++i) {
      const double e = pred[i] - truth[i];
      num += e * e;
      den += truth[i] * truth[i];
    }
    if (!(den > 0.0)) {
      throw ValidationError("relative_mse: truth sample " + std::to_string(s) + " has zero norm");
    }
    out[s] = num / den;
  }
  return out;
}

double relative_mse(const Tensor& pred, const Tensor& truth, bool per_sample) {
  if (!per_sample) {
    return relative_mse_per_sample(pred.reshaped({1, pred.size()}),
                                   truth.reshaped({1, truth.size()}))[0];
  }
  const std::vector<double> e = relative_mse_per_sample(pred, truth);
  return std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
}

double log_minmax_score(double eps, double eps_min, double eps_max) {
  if (!(eps_min > 0.0) || !(eps_min < eps_max) || !(eps >= eps_min) || !(eps <= eps_max)) {
    throw ValidationError("log_minmax_score: need 0 < eps_min <= eps <= eps_max and eps_min < eps_max");
  }
  return 100.0 * (1.0 - (std::log(eps) - std::log(eps_min)) / (std::log(eps_max) - std::log(eps_min)));
}

std::vector<double> log_minmax_scores(const std::vector<double>& eps) {
  if (eps.size() < 2) throw ValidationError("score: need at least two error values");
  const auto [lo, hi] = std::minmax_element(eps.begin(), eps.end());
  if (*lo == *hi) throw ValidationError("score: need at least two distinct error values");
  std::vector<double> out;
  out.reserve(eps.size());
  for (double e : eps) out.push_back(log_minmax_score(e, *lo, *hi));
  return out;
}

// ---- optimization -------------------------------------------------------

void AdamW::step(std::deque<Parameter>& params, double lr) {
  std::vector<Parameter*> ptrs;
  for (Parameter& p : params) ptrs.push_back(&p);
  step(std::move(ptrs), lr);
}

void AdamW::step(std::vector<Parameter*> params, double lr) {
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value().shape());
      v_.emplace_back(p->value().shape());
    }
  }
  if (m_.size() != params.size()) {
    throw ValidationError("AdamW: optimizer state holds " + std::to_string(m_.size()) +
                          " tensors but " + std::to_string(params.size()) + " parameters were given");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (m_[k].shape() != p.value().shape()) {
      throw ValidationError("AdamW: state shape mismatch for " + p.name());
    }
    Tensor& w = p.mutable_value();
    const Tensor& g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= lr * cfg_.weight_decay * w[i];
      m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g[i];
      v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + cfg_.eps);
    }
  }
}

double steplr(double lr0, double gamma, std::size_t step_size, std::size_t epoch) {
  if (step_size == 0) throw ValidationError("steplr: step_size must be positive");
  return lr0 * std::pow(gamma, static_cast<double>(epoch / step_size));
}

// ---- layout ---------------------------------------------------------------

Tensor window_to_model(const Tensor& window) {
  if (window.rank() != 4) throw DimensionError("window must be [C, T, S1, S2]");
  const std::size_t c = window.extent(0), t = window.extent(1);
  const std::size_t s1 = window.extent(2), s2 = window.extent(3);
  const std::size_t width = c * t, plane = s1 * s2;
  Tensor out({s1, s2, width});
  for (std::size_t k = 0; k < width; ++k)
    for (std::size_t p = 0; p < plane; ++p) out[p * width + k] = window[k * plane + p];
  return out;
}

Tensor model_to_frame(const Tensor& out, std::size_t channels) {
  if (out.rank() != 3 || out.extent(2) != channels) {
    throw DimensionError("model output " + to_string(out.shape()) + " is not [S1, S2, C]");
  }
  const std::size_t plane = out.extent(0) * out.extent(1);
  Tensor frame({channels, 1, out.extent(0), out.extent(1)});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) frame[c * plane + p] = out[p * channels + c];
  return frame;
}

std::size_t model_input_width(const TrajectoryDataset& data) { return data.channels * data.t_in; }

// ---- rollout --------------------------------------------------------------

Tensor rollout_autoregressive(const StepFn& step, const Tensor& window, std::size_t steps) {
  if (steps == 0) throw ValidationError("rollout: steps must be at least 1");
  if (window.rank() != 4) throw DimensionError("rollout window must be [C, T, S1, S2]");
  const std::size_t c = window.extent(0), t_in = window.extent(1);
  const std::size_t plane = window.extent(2) * window.extent(3);
  Tensor out({c, steps, window.extent(2), window.extent(3)});
  Tensor w = window;
  for (std::size_t s = 0; s < steps; ++s) {
    const Tensor next = step(w);
    require_same_shape(next.shape(), {c, 1, window.extent(2), window.extent(3)}, "rollout step");
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::copy_n(next.data().begin() + ch * plane, plane,
                  out.data().begin() + (ch * steps + s) * plane);
      double* base = w.data().data() + ch * t_in * plane;
      std::copy(base + plane, base + t_in * plane, base);
      std::copy_n(next.data().begin() + ch * plane, plane, base + (t_in - 1) * plane);
    }
  }
  return out;
}

Tensor rollout_autoregressive(const StepFn& step, const Tensor& window, std::size_t steps,
                              Benchmark benchmark) {
  if (!is_evolutionary(benchmark) && steps != 1) {
    throw ValidationError("rollout: " + to_string(benchmark) +
                          " maps parameters to a solution; steps must be 1");
  }
  return rollout_autoregressive(step, window, steps);
}

StepFn persistence_step() {
  return [](const Tensor& window) {
    const Shape& s = window.shape();
    if (s.size() != 4 || s[1] == 0) throw DimensionError("persistence_step: expected [C, T, S1, S2], got " + to_string(s));
    const std::size_t plane = s[2] * s[3];
    Tensor out({s[0], 1, s[2], s[3]});
    for (std::size_t c = 0; c < s[0]; ++c) {
      const double* src = window.data().data() + (c * s[1] + s[1] - 1) * plane;
      std::copy(src, src + plane, out.data().data() + c * plane);
    }
    return out;
  };
}

StepFn model_step(DynFormer& model, const NormPair& norm) {
  return [&model, norm](const Tensor& window) {
    Tensor x = window_to_model(minmax_normalize(window, norm.input));
    Shape batched = x.shape();
    batched.insert(batched.begin(), 1);
    Tensor y = model.predict(x.reshaped(batched));
    y = y.reshaped({y.extent(1), y.extent(2), y.extent(3)});
    return minmax_denormalize(model_to_frame(y, norm.target.channels()), norm.target);
  };
}

// ---- training -------------------------------------------------------------

Split make_split(std::size_t total, std::size_t n_train, std::size_t n_test) {
  if (n_train == 0) throw ValidationError("split: need at least one training sample");
  if (n_train + n_test > total) {
    throw ValidationError("split: " + std::to_string(n_train) + " train + " +
                          std::to_string(n_test) + " test exceeds " + std::to_string(total) +
                          " samples");
  }
  Split s;
  for (std::size_t i = 0; i < n_train; ++i) s.train.push_back(i);
  for (std::size_t i = n_train; i < n_train + n_test; ++i) s.test.push_back(i);
  return s;
}

namespace {

struct Pair {
  Tensor x;  // [S1, S2, d_in], normalized
  Tensor y;  // [S1, S2, C], normalized
};

// Frame t of the concatenated input/target sequence of one sample.
Tensor frame_of(const TrajectorySample& s, std::size_t t) {
  const std::size_t c = s.input.extent(0), t_in = s.input.extent(1), t_out = s.target.extent(1);
  const std::size_t s1 = s.input.extent(2), s2 = s.input.extent(3), plane = s1 * s2;
  Tensor f({c, 1, s1, s2});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = t < t_in ? s.input.data().data() + (ch * t_in + t) * plane
                                 : s.target.data().data() + (ch * t_out + t - t_in) * plane;
    std::copy_n(src, plane, f.data().begin() + ch * plane);
  }
  return f;
}

Tensor window_of(const TrajectorySample& s, std::size_t start, std::size_t t_in) {
  const std::size_t c = s.input.extent(0), plane = s.input.extent(2) * s.input.extent(3);
  Tensor w({c, t_in, s.input.extent(2), s.input.extent(3)});
  for (std::size_t t = 0; t < t_in; ++t) {
    const Tensor f = frame_of(s, start + t);
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(f.data().begin() + ch * plane, plane, w.data().begin() + (ch * t_in + t) * plane);
  }
  return w;
}

std::vector<Pair> training_pairs(const TrajectoryDataset& data, const std::vector<std::size_t>& idx,
                                 const NormPair& norm, bool all_windows) {
  std::vector<Pair> pairs;
  for (std::size_t i : idx) {
    const TrajectorySample& s = data.samples[i];
    if (!is_evolutionary(data.benchmark)) {
      pairs.push_back({window_to_model(minmax_normalize(s.input, norm.input)),
                       window_to_model(minmax_normalize(s.target, norm.target))});
      continue;
    }
    const std::size_t windows = all_windows ? data.t_out : 1;
    for (std::size_t w = 0; w < windows; ++w) {
      pairs.push_back({window_to_model(minmax_normalize(window_of(s, w, data.t_in), norm.input)),
                       window_to_model(minmax_normalize(frame_of(s, w + data.t_in), norm.target))});
    }
  }
  return pairs;
}

Tensor stack_batch(const std::vector<Pair>& pairs, std::span<const std::size_t> order,
                   Tensor Pair::*field) {
  const Tensor& first = pairs[order[0]].*field;
  Shape shape = first.shape();
  shape.insert(shape.begin(), order.size());
  Tensor out(shape);
  for (std::size_t b = 0; b < order.size(); ++b) {
    const Tensor& t = pairs[order[b]].*field;
    std::copy(t.data().begin(), t.data().end(), out.data().begin() + b * first.size());
  }
  return out;
}

void check_model_fits(const DynFormer& model, const TrajectoryDataset& data) {
  const ModelConfig& cfg = model.config();
  if (cfg.d_in != model_input_width(data) || cfg.d_out != data.channels) {
    throw ValidationError("model expects d_in=" + std::to_string(cfg.d_in) + ", d_out=" +
                          std::to_string(cfg.d_out) + " but the dataset provides d_in=" +
                          std::to_string(model_input_width(data)) + ", d_out=" +
                          std::to_string(data.channels));
  }
}

}  // namespace

std::vector<double> evaluate_per_sample(const StepFn& step, const TrajectoryDataset& data,
                                        const std::vector<std::size_t>& indices,
                                        std::size_t workers) {
  std::vector<double> eps(indices.size());
  const std::size_t steps = is_evolutionary(data.benchmark) ? data.t_out : 1;
  parallel_for(
      indices.size(),
      [&](std::size_t k) {
        const TrajectorySample& s = data.samples.at(indices[k]);
        const Tensor pred = rollout_autoregressive(step, s.input, steps, data.benchmark);
        eps[k] = relative_mse(pred, s.target, false);
      },
      workers);
  return eps;
}

double evaluate(const StepFn& step, const TrajectoryDataset& data,
                const std::vector<std::size_t>& indices, std::size_t workers) {
  if (indices.empty()) return 0.0;
  const std::vector<double> eps = evaluate_per_sample(step, data, indices, workers);
  double sum = 0.0;
  for (double e : eps) sum += e;  // index order
  return sum / static_cast<double>(eps.size());
}

TrainResult train(DynFormer& model, const TrajectoryDataset& data, const Split& split,
                  const TrainOptions& opts, const EpochCallback& on_epoch,
                  const StopRule& stop) {
  data.validate();
  check_model_fits(model, data);
  if (split.train.empty()) throw ValidationError("train: empty training split");
  if (opts.epochs == 0 || opts.batch_size == 0) {
    throw ValidationError("train: epochs and batch_size must be positive");
  }

  TrainResult result;
  result.norm = compute_norm_stats(data, split.train);
  const std::uint64_t norm_check = result.norm.input.checksum() ^ (result.norm.target.checksum() << 1);
  const std::vector<Pair> pairs = training_pairs(data, split.train, result.norm, opts.all_windows);

  const CostReport cost = cost_account(model.config(), data.s1, data.s2);
  AdamW optimizer(opts.optimizer);
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  const StepFn step = model_step(model, result.norm);
  double last_eps = 0.0;

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = steplr(opts.optimizer.lr, opts.gamma, opts.step_size, epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += opts.batch_size, ++batch_index) {
      const std::size_t n = std::min(opts.batch_size, order.size() - b0);
      const std::span<const std::size_t> idx(order.data() + b0, n);
      model.zero_grad();
      double loss = 0.0;
      try {
        Tape tape;
        Var pred = model.forward(tape, tape.constant(stack_batch(pairs, idx, &Pair::x)));
        Var l = relative_mse_loss(pred, stack_batch(pairs, idx, &Pair::y));
        loss = l.value()[0];
        if (!std::isfinite(loss)) throw NumericalError("loss is not finite");
        tape.backward(l);
      } catch (const NumericalError& e) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch + 1) +
                             ", batch " + std::to_string(batch_index + 1) + ": " + e.what());
      }
      optimizer.step(model.parameters(), lr);
      loss_sum += loss * static_cast<double>(n);
    }

    const bool eval_now = !split.test.empty() &&
                          (epoch + 1 == opts.epochs || opts.eval_every <= 1 ||
                           epoch % opts.eval_every == 0);
    if (eval_now) last_eps = evaluate(step, data, split.test, opts.eval_workers);

    const std::uint64_t now_check =
        result.norm.input.checksum() ^ (result.norm.target.checksum() << 1);
    if (now_check != norm_check) throw ValidationError("normalization statistics changed during training");

    TrainRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(pairs.size());
    rec.test_eps = last_eps;
    rec.lr = lr;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rec.mulacc = cost.mulacc.total();
    rec.params = cost.params;
    result.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stop && stop(result.records)) break;
  }
  return result;
}

// ---- cost accounting ------------------------------------------------------

CostReport cost_account(const ModelConfig& cfg, std::size_t s1, std::size_t s2) {
  DynFormer model(cfg, 0);
  CostReport r;
  r.params = model.parameter_count();
  CostScope scope;
  model.predict(Tensor({1, s1, s2, cfg.d_in}));
  r.mulacc = scope.tally();
  return r;
}

}  // namespace dynformer
