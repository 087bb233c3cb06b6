#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dynformer/config.hpp"
#include "dynformer/error.hpp"
#include "dynformer/harness.hpp"
#include "dynformer/verify.hpp"

namespace fs = std::filesystem;
using namespace dynformer;

namespace {

enum Exit { kOk = 0, kValidation = 1, kNumerical = 2, kIo = 3 };

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f || !(f << text)) throw IoError("cannot write " + path.string());
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

// ---- gen ----------------------------------------------------------------------

struct GenArgs {
  std::string benchmark;
  std::string scale = "desk";
  std::uint64_t seed = 123;
  std::string out;
  bool f64 = false;
};

int cmd_gen(const GenArgs& a) {
  const Benchmark b = parse_benchmark(a.benchmark);
  const TrajectoryDataset data = generate_dataset(b, a.scale, a.seed);
  const fs::path out = a.out.empty() ? fs::path("data") / (to_string(b) + "-" + a.scale + ".bin") : fs::path(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_trajectories(data, out, a.f64 ? StorageType::kFloat64 : StorageType::kFloat32);

  fs::path manifest = out;
  manifest.replace_extension(".manifest.ini");
  std::string m = "[dataset]\n";
  m += "benchmark=" + to_string(b) + "\nscale=" + a.scale + "\nseed=" + std::to_string(a.seed) + "\n";
  m += std::string("storage=") + (a.f64 ? "f64" : "f32") + "\n";
  m += "samples=" + std::to_string(data.samples.size()) + "\n";
  m += "shape_in=" + std::to_string(data.channels) + "," + std::to_string(data.t_in) + "," +
       std::to_string(data.s1) + "," + std::to_string(data.s2) + "\n";
  m += "shape_out=" + std::to_string(data.channels) + "," + std::to_string(data.t_out) + "," +
       std::to_string(data.s1) + "," + std::to_string(data.s2) + "\n";
  m += "input_min=" + join(data.in_min) + "\ninput_max=" + join(data.in_max) + "\n";
  m += "target_min=" + join(data.out_min) + "\ntarget_max=" + join(data.out_max) + "\n";
  m += "checksum=" + file_checksum(out) + "\n";
  write_text(manifest, m);

  std::printf("wrote %zu samples to %s\n", data.samples.size(), out.string().c_str());
  for (std::size_t c = 0; c < data.channels; ++c) {
    std::printf("channel %zu: input [%.6g, %.6g], target [%.6g, %.6g]\n", c, data.in_min[c], data.in_max[c],
                data.out_min[c], data.out_max[c]);
  }
  return kOk;
}

// ---- train --------------------------------------------------------------------

struct RunArgs {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> epochs;
};

RunConfig resolve(const RunArgs& a) {
  if (!a.config.empty() && !a.preset.empty()) throw ValidationError("give either --config or --preset, not both");
  RunConfig cfg;
  if (!a.config.empty()) {
    cfg = load_run_config(a.config);
  } else if (!a.preset.empty()) {
    cfg = run_preset(a.preset);
  } else {
    throw ValidationError("a run needs --config or --preset");
  }
  if (a.seed) cfg.train.seed = *a.seed;
  if (!a.out.empty()) cfg.out_dir = a.out;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  return cfg;
}

int cmd_train(const RunArgs& a) {
  const RunConfig cfg = resolve(a);
  const RunOutputs out = execute_run(cfg, [](const TrainRecord& r) {
    if (r.epoch == 1) std::printf("%-6s %-14s %-14s %-10s %s\n", "epoch", "train_loss", "test_eps", "lr", "seconds");
    std::printf("%-6zu %-14.6e %-14.6e %-10.3e %.2f\n", r.epoch, r.train_loss, r.test_eps, r.lr, r.seconds);
    std::fflush(stdout);
  });
  std::printf("parameters %zu, forward multiply-adds %llu\n", out.records.back().params,
              static_cast<unsigned long long>(out.records.back().mulacc));
  std::printf("outputs in %s\n", cfg.out_dir.c_str());
  return kOk;
}

// ---- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string out;
  bool all = false;
  bool persistence = false;
};

int cmd_eval(const EvalArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  const std::string path = a.dataset.empty() ? ck.config.dataset : a.dataset;
  const TrajectoryDataset data = load_trajectories(path);
  if (data.benchmark != ck.config.benchmark) {
    throw ValidationError("checkpoint was trained on " + to_string(ck.config.benchmark) + " but " + path +
                          " holds " + to_string(data.benchmark));
  }
  if (model_input_width(data) != ck.config.model.d_in || data.channels != ck.config.model.d_out) {
    throw ValidationError("checkpoint model does not match the layout of " + path);
  }
  std::vector<std::size_t> idx;
  if (a.all) {
    for (std::size_t i = 0; i < data.samples.size(); ++i) idx.push_back(i);
  } else {
    idx = make_split(data.samples.size(), ck.config.n_train, ck.config.n_test).test;
  }
  if (idx.empty()) throw ValidationError("no samples to evaluate; pass --all");

  const StepFn step = a.persistence ? persistence_step() : model_step(*ck.model, ck.norm);
  const std::vector<double> eps = evaluate_per_sample(step, data, idx, ck.config.train.eval_workers);
  double mean = 0.0;
  for (double e : eps) mean += e;
  mean /= static_cast<double>(eps.size());

  const fs::path out = a.out.empty() ? fs::path(ck.config.out_dir) / "eval.csv" : fs::path(a.out);
  std::string csv = "sample,eps\n";
  for (std::size_t k = 0; k < idx.size(); ++k) csv += std::to_string(idx[k]) + "," + format_double(eps[k]) + "\n";
  write_text(out, csv);
  std::printf("eps %s over %zu samples (per-sample values in %s)\n", format_double(mean).c_str(), idx.size(),
              out.string().c_str());
  return kOk;
}

// ---- score --------------------------------------------------------------------

int cmd_score(const std::vector<double>& eps) {
  const std::vector<double> s = log_minmax_scores(eps);
  for (std::size_t i = 0; i < eps.size(); ++i) std::printf("%s %s\n", format_double(eps[i]).c_str(), format_double(s[i]).c_str());
  return kOk;
}

// ---- verify -------------------------------------------------------------------

int cmd_verify(bool all) {
  const bool ok = verify::run_suite(all ? verify::all_criteria() : verify::invariant_criteria(),
                                    [](const verify::CriterionReport& r) {
                                      std::fputs(verify::format_report(r).c_str(), stdout);
                                      std::fflush(stdout);
                                    });
  std::puts(ok ? "all checks passed" : "some checks FAILED");
  return ok ? kOk : kValidation;
}

// ---- ablate -------------------------------------------------------------------

int cmd_ablate(const RunArgs& a, bool full, bool cost_only, const std::string& csv_path) {
  const RunConfig base = resolve(a);
  const std::vector<AblationConfig> cells = full ? all_ablation_configs() : one_axis_ablation_configs();
  std::size_t s1 = 64, s2 = 64;
  if (!cost_only) {
    const TrajectoryDataset probe = load_trajectories(base.dataset);
    s1 = probe.s1;
    s2 = probe.s2;
  }
  const fs::path out = csv_path.empty() ? fs::path(base.out_dir) / "ablation.csv" : fs::path(csv_path);
  std::string csv = "attention,embedding,mixing,decomposition,flow,params,mulacc,train_loss,test_eps\n";
  for (std::size_t k = 0; k < cells.size(); ++k) {
    RunConfig cfg = base;
    cfg.model.ablation = cells[k];
    const AblationConfig& c = cells[k];
    std::string row = to_string(c.attention) + "," + to_string(c.embedding) + "," + to_string(c.mixing) + "," +
                      to_string(c.decomposition) + "," + to_string(c.flow) + ",";
    const CostReport cost = cost_account(cfg.model, s1, s2);
    row += std::to_string(cost.params) + "," + std::to_string(cost.mulacc.total()) + ",";
    if (cost_only) {
      row += ",";
    } else {
      try {
        const RunOutputs r = execute_run(cfg, {}, false);
        row += format_double(r.records.back().train_loss) + "," + format_double(r.records.back().test_eps);
      } catch (const NumericalError& e) {
        std::fprintf(stderr, "cell %zu diverged: %s\n", k + 1, e.what());
        row += "nan,nan";
      }
    }
    csv += row + "\n";
    std::printf("[%zu/%zu] %s\n", k + 1, cells.size(), row.c_str());
    std::fflush(stdout);
  }
  write_text(out, csv);
  std::printf("wrote %s\n", out.string().c_str());
  return kOk;
}

void add_run_flags(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("--config", a.config, "Run configuration (INI)");
  cmd->add_option("--preset", a.preset, "Named run preset, e.g. 2ddarcy-tiny");
  cmd->add_option("--seed", a.seed, "Override the training seed");
  cmd->add_option("--out", a.out, "Override the output directory");
  cmd->add_option("--epochs", a.epochs, "Override the number of epochs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DynFormer neural operator: data generation, training and evaluation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a trajectory dataset");
  g->add_option("benchmark", gen.benchmark, "1dks, 2ddarcy or 2dns")->required();
  g->add_option("scale,--preset", gen.scale, "smoke, desk or full");
  g->add_option("seed,--seed", gen.seed, "Generation seed");
  g->add_option("--out", gen.out, "Container path (default data/<benchmark>-<scale>.bin)");
  auto* f64 = g->add_flag("--f64", gen.f64, "Store float64 values");
  g->add_flag("--f32", "Store float32 values (default)")->excludes(f64);

  RunArgs train_args;
  auto* t = app.add_subcommand("train", "Train a model and write metrics, checkpoint and manifest");
  add_run_flags(t, train_args);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint with autoregressive rollouts");
  e->add_option("checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("--dataset", eval.dataset, "Dataset (default: the one named in the checkpoint)");
  e->add_option("--out", eval.out, "Per-sample CSV path");
  e->add_flag("--all", eval.all, "Evaluate every sample instead of the test split");
  e->add_flag("--persistence", eval.persistence, "Evaluate the repeat-last-frame baseline instead");

  std::vector<double> eps;
  auto* s = app.add_subcommand("score", "Map a list of errors to log min-max scores in [0, 100]");
  s->add_option("eps", eps, "Error values")->required();

  bool verify_all = false;
  auto* v = app.add_subcommand("verify", "Run the invariant self-checks");
  v->add_flag("--all", verify_all, "Include the training-based checks");

  RunArgs ablate_args;
  bool full = false, cost_only = false;
  std::string ablate_csv;
  auto* ab = app.add_subcommand("ablate", "Sweep ablation cells, one CSV row per cell");
  add_run_flags(ab, ablate_args);
  ab->add_flag("--full", full, "All 108 cells instead of the one-axis sweep");
  ab->add_flag("--cost-only", cost_only, "Report parameters and multiply-adds without training");
  ab->add_option("--csv", ablate_csv, "CSV path (default <out>/ablation.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (g->parsed()) return cmd_gen(gen);
    if (t->parsed()) return cmd_train(train_args);
    if (e->parsed()) return cmd_eval(eval);
    if (s->parsed()) return cmd_score(eps);
    if (v->parsed()) return cmd_verify(verify_all);
    if (ab->parsed()) return cmd_ablate(ablate_args, full, cost_only, ablate_csv);
  } catch (const NumericalError& err) {
    std::fprintf(stderr, "numerical error: %s\n", err.what());
    return kNumerical;
  } catch (const IoError& err) {
    std::fprintf(stderr, "i/o error: %s\n", err.what());
    return kIo;
  } catch (const fs::filesystem_error& err) {
    std::fprintf(stderr, "i/o error: %s\n", err.what());
    return kIo;
  } catch (const Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kValidation;
  }
  return kOk;
}
