#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <memory>
#include <optional>

#include "dynformer/attention.hpp"
#include "dynformer/config.hpp"
#include "dynformer/error.hpp"
#include "dynformer/harness.hpp"
#include "dynformer/spectral.hpp"
#include "dynformer/verify.hpp"

namespace py = pybind11;
using namespace dynformer;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  Tensor t(std::move(shape));
  if (t.size() > 0) std::memcpy(t.data().data(), a.data(), t.size() * sizeof(double));
  return t;
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array a(shape);
  if (t.size() > 0) std::memcpy(a.mutable_data(), t.data().data(), t.size() * sizeof(double));
  return a;
}

ModeSet modes_from(const std::pair<std::size_t, std::size_t>& m) { return {m.first, m.second}; }

// Samples stacked along a new leading axis.
Array stack(const TrajectoryDataset& d, bool targets) {
  const std::size_t t = targets ? d.t_out : d.t_in;
  const std::size_t per = d.channels * t * d.s1 * d.s2;
  Array a(std::vector<py::ssize_t>{static_cast<py::ssize_t>(d.samples.size()), static_cast<py::ssize_t>(d.channels),
                                   static_cast<py::ssize_t>(t), static_cast<py::ssize_t>(d.s1),
                                   static_cast<py::ssize_t>(d.s2)});
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const Tensor& src = targets ? d.samples[i].target : d.samples[i].input;
    std::memcpy(a.mutable_data() + i * per, src.data().data(), per * sizeof(double));
  }
  return a;
}

py::dict record_dict(const TrainRecord& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["train_loss"] = r.train_loss;
  d["test_eps"] = r.test_eps;
  d["lr"] = r.lr;
  d["seconds"] = r.seconds;
  d["mulacc"] = r.mulacc;
  d["params"] = r.params;
  return d;
}

py::dict report_dict(const verify::CriterionReport& r) {
  py::list checks;
  for (const verify::Check& c : r.checks) {
    py::dict d;
    d["name"] = c.name;
    d["measured"] = c.measured;
    d["bound"] = c.bound;
    d["passed"] = c.passed;
    checks.append(d);
  }
  py::dict d;
  d["id"] = r.id;
  d["title"] = r.title;
  d["passed"] = r.passed();
  d["seconds"] = r.seconds;
  d["note"] = r.note;
  d["checks"] = checks;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "DynFormer neural operator core";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  // ---- data ----
  py::class_<TrajectoryDataset>(m, "Dataset")
      .def_property_readonly("benchmark", [](const TrajectoryDataset& d) { return to_string(d.benchmark); })
      .def_readonly("channels", &TrajectoryDataset::channels)
      .def_readonly("t_in", &TrajectoryDataset::t_in)
      .def_readonly("t_out", &TrajectoryDataset::t_out)
      .def_property_readonly("spatial", [](const TrajectoryDataset& d) { return std::make_pair(d.s1, d.s2); })
      .def("__len__", [](const TrajectoryDataset& d) { return d.samples.size(); })
      .def("inputs", [](const TrajectoryDataset& d) { return stack(d, false); }, "[N, C, T_in, S1, S2]")
      .def("targets", [](const TrajectoryDataset& d) { return stack(d, true); }, "[N, C, T_out, S1, S2]")
      .def_readonly("input_min", &TrajectoryDataset::in_min)
      .def_readonly("input_max", &TrajectoryDataset::in_max)
      .def_readonly("target_min", &TrajectoryDataset::out_min)
      .def_readonly("target_max", &TrajectoryDataset::out_max)
      .def(
          "save",
          [](const TrajectoryDataset& d, const std::string& path, bool f64) {
            save_trajectories(d, path, f64 ? StorageType::kFloat64 : StorageType::kFloat32);
          },
          py::arg("path"), py::arg("f64") = false);

  m.def(
      "generate_dataset",
      [](const std::string& benchmark, const std::string& scale, std::uint64_t seed) {
        const Benchmark b = parse_benchmark(benchmark);
        py::gil_scoped_release release;
        return generate_dataset(b, scale, seed);
      },
      py::arg("benchmark"), py::arg("scale") = "smoke", py::arg("seed") = 123);
  m.def("load_dataset", [](const std::string& path) { return load_trajectories(path); }, py::arg("path"));
  m.def("file_checksum", [](const std::string& path) { return file_checksum(path); }, py::arg("path"));

  // ---- spectral and attention operators ----
  m.def(
      "project_large_scale",
      [](const Array& u, std::pair<std::size_t, std::size_t> modes) {
        return to_array(project_large_scale(to_tensor(u), modes_from(modes)));
      },
      py::arg("u"), py::arg("modes"), "Retain the low modes of a [B, N1, N2, d] field.");
  m.def(
      "project_small_scale",
      [](const Array& u, std::pair<std::size_t, std::size_t> modes) {
        return to_array(project_small_scale(to_tensor(u), modes_from(modes)));
      },
      py::arg("u"), py::arg("modes"));
  m.def(
      "kronecker_mix",
      [](const Array& k1, const Array& k2, const Array& v) {
        Tape t;
        return to_array(kronecker_mix({t.constant(to_tensor(k1)), t.constant(to_tensor(k2))}, t.constant(to_tensor(v))).value());
      },
      py::arg("k1"), py::arg("k2"), py::arg("v"), "(K1 kron K2) applied to v of shape [N1, N2, d].");

  // ---- metrics ----
  m.def(
      "relative_mse",
      [](const Array& pred, const Array& truth, bool per_sample) {
        return relative_mse(to_tensor(pred), to_tensor(truth), per_sample);
      },
      py::arg("pred"), py::arg("truth"), py::arg("per_sample") = true);
  m.def("log_minmax_scores", &log_minmax_scores, py::arg("eps"));
  m.def("steplr", &steplr, py::arg("lr0"), py::arg("gamma"), py::arg("step_size"), py::arg("epoch"));

  // ---- configuration and model ----
  m.def("run_preset", [](const std::string& name) { return to_ini(run_preset(name)); }, py::arg("name"),
        "INI text of a named run preset.");
  m.def("run_preset_names", &run_preset_names);
  m.def("normalize_config", [](const std::string& ini) { return to_ini(parse_run_config(ini)); }, py::arg("ini"),
        "Parse and re-emit a run configuration, raising on invalid fields.");

  py::class_<DynFormer>(m, "Model")
      .def(py::init([](const std::string& ini, std::optional<std::uint64_t> seed) {
             const RunConfig cfg = parse_run_config(ini);
             return std::make_unique<DynFormer>(cfg.model, seed.value_or(cfg.train.seed));
           }),
           py::arg("config"), py::arg("seed") = py::none())
      .def("predict", [](DynFormer& model, const Array& u) { return to_array(model.predict(to_tensor(u))); },
           py::arg("u"), "[B, N1, N2, d_in] -> [B, N1, N2, d_out]")
      .def_property_readonly("parameter_count", &DynFormer::parameter_count)
      .def("parameter_names", [](const DynFormer& model) {
        std::vector<std::string> names;
        for (const Parameter& p : model.parameters()) names.push_back(p.name());
        return names;
      });

  m.def(
      "cost_account",
      [](const std::string& ini, std::size_t s1, std::size_t s2) {
        const CostReport r = cost_account(parse_run_config(ini).model, s1, s2);
        py::dict d;
        d["params"] = r.params;
        d["total"] = r.mulacc.total();
        for (std::size_t c = 0; c < static_cast<std::size_t>(CostCategory::kCount); ++c) {
          d[py::str(std::string(category_name(static_cast<CostCategory>(c))))] = r.mulacc.by_category[c];
        }
        return d;
      },
      py::arg("config"), py::arg("s1"), py::arg("s2"));

  // ---- runs ----
  m.def(
      "train",
      [](const std::string& ini, bool write_outputs) {
        const RunConfig cfg = parse_run_config(ini);
        std::vector<TrainRecord> records;
        {
          py::gil_scoped_release release;
          records = execute_run(cfg, {}, write_outputs).records;
        }
        py::list out;
        for (const TrainRecord& r : records) out.append(record_dict(r));
        return out;
      },
      py::arg("config"), py::arg("write_outputs") = true,
      "Train from INI text; returns one record per epoch.");
  m.def(
      "evaluate_checkpoint",
      [](const std::string& path, const std::string& dataset, bool all, bool persistence) {
        Checkpoint ck = load_checkpoint(path);
        const TrajectoryDataset data = load_trajectories(dataset.empty() ? ck.config.dataset : dataset);
        std::vector<std::size_t> idx;
        if (all) {
          for (std::size_t i = 0; i < data.samples.size(); ++i) idx.push_back(i);
        } else {
          idx = make_split(data.samples.size(), ck.config.n_train, ck.config.n_test).test;
        }
        const StepFn step = persistence ? persistence_step() : model_step(*ck.model, ck.norm);
        py::gil_scoped_release release;
        return evaluate_per_sample(step, data, idx, ck.config.train.eval_workers);
      },
      py::arg("checkpoint"), py::arg("dataset") = "", py::arg("all") = false, py::arg("persistence") = false,
      "Per-sample rollout errors.");

  // ---- self-verification ----
  m.def("run_criterion", [](int id) { return report_dict(verify::run_criterion(id)); }, py::arg("id"));
  m.def("invariant_criteria", &verify::invariant_criteria);
}
