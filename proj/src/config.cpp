#include "dynformer/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "dynformer/error.hpp"
#include "dynformer/pde.hpp"

namespace dynformer {

namespace pt = boost::property_tree;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::size_t parse_size(const std::string& s) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError("expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError("expected a number, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ValidationError("expected true or false, got '" + s + "'");
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(item));
  return out;
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define SIZE_FIELD(sec, key, member)                                             \
  Field {                                                                        \
    sec, key, [](const RunConfig& c) { return std::to_string(c.member); },       \
        [](RunConfig& c, const std::string& s) { c.member = parse_size(s); }     \
  }
#define DOUBLE_FIELD(sec, key, member)                                           \
  Field {                                                                        \
    sec, key, [](const RunConfig& c) { return format_double(c.member); },        \
        [](RunConfig& c, const std::string& s) { c.member = parse_double(s); }   \
  }
#define STRING_FIELD(sec, key, member)                                           \
  Field {                                                                        \
    sec, key, [](const RunConfig& c) { return c.member; },                       \
        [](RunConfig& c, const std::string& s) { c.member = s; }                 \
  }
#define ENUM_FIELD(sec, key, member, parser)                                     \
  Field {                                                                        \
    sec, key, [](const RunConfig& c) { return to_string(c.member); },            \
        [](RunConfig& c, const std::string& s) { c.member = parser(s); }         \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      ENUM_FIELD("run", "benchmark", benchmark, parse_benchmark),
      STRING_FIELD("run", "preset", preset),
      STRING_FIELD("run", "dataset", dataset),
      STRING_FIELD("run", "dataset_checksum", dataset_checksum),
      SIZE_FIELD("run", "n_train", n_train),
      SIZE_FIELD("run", "n_test", n_test),
      STRING_FIELD("run", "out_dir", out_dir),
      SIZE_FIELD("run", "seed", train.seed),
      SIZE_FIELD("run", "epochs", train.epochs),
      SIZE_FIELD("run", "batch_size", train.batch_size),
      Field{"run", "all_windows",
            [](const RunConfig& c) { return std::string(c.train.all_windows ? "true" : "false"); },
            [](RunConfig& c, const std::string& s) { c.train.all_windows = parse_bool(s); }},
      SIZE_FIELD("run", "eval_every", train.eval_every),
      SIZE_FIELD("run", "eval_workers", train.eval_workers),

      SIZE_FIELD("model", "d_in", model.d_in),
      SIZE_FIELD("model", "d_out", model.d_out),
      SIZE_FIELD("model", "d_n", model.d_n),
      SIZE_FIELD("model", "layers", model.layers),
      Field{"model", "modes",
            [](const RunConfig& c) {
              return std::to_string(c.model.modes.m1) + "," + std::to_string(c.model.modes.m2);
            },
            [](RunConfig& c, const std::string& s) {
              const auto comma = s.find(',');
              if (comma == std::string::npos) throw ValidationError("expected 'm1,m2', got '" + s + "'");
              c.model.modes = {parse_size(s.substr(0, comma)), parse_size(s.substr(comma + 1))};
            }},
      SIZE_FIELD("model", "heads", model.heads),
      SIZE_FIELD("model", "n_linear", model.n_linear),
      SIZE_FIELD("model", "n_nonlinear", model.n_nonlinear),
      DOUBLE_FIELD("model", "rope_base", model.rope_base),

      ENUM_FIELD("ablation", "attention", model.ablation.attention, parse_attention),
      ENUM_FIELD("ablation", "embedding", model.ablation.embedding, parse_embedding),
      ENUM_FIELD("ablation", "mixing", model.ablation.mixing, parse_mixing),
      ENUM_FIELD("ablation", "decomposition", model.ablation.decomposition, parse_decomposition),
      ENUM_FIELD("ablation", "flow", model.ablation.flow, parse_flow),

      DOUBLE_FIELD("optimizer", "lr", train.optimizer.lr),
      DOUBLE_FIELD("optimizer", "weight_decay", train.optimizer.weight_decay),
      DOUBLE_FIELD("optimizer", "beta1", train.optimizer.beta1),
      DOUBLE_FIELD("optimizer", "beta2", train.optimizer.beta2),
      DOUBLE_FIELD("optimizer", "eps", train.optimizer.eps),
      DOUBLE_FIELD("optimizer", "gamma", train.gamma),
      SIZE_FIELD("optimizer", "step_size", train.step_size),
  };
  return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef STRING_FIELD
#undef ENUM_FIELD

pt::ptree to_tree(const RunConfig& cfg) {
  pt::ptree tree;
  for (const Field& f : fields()) tree.put(pt::ptree::path_type(std::string(f.section) + "/" + f.key, '/'), f.get(cfg));
  return tree;
}

pt::ptree read_ini(const std::string& text) {
  std::istringstream in(text);
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return tree;
}

std::string write_ini(const pt::ptree& tree) {
  std::ostringstream out;
  pt::write_ini(out, tree);
  return out.str();
}

RunConfig from_tree(const pt::ptree& tree) {
  RunConfig cfg;
  if (auto name = tree.get_optional<std::string>(pt::ptree::path_type("run/preset", '/'));
      name && !name->empty()) {
    cfg = run_preset(*name);
  }

  std::vector<std::string> problems;
  std::set<std::string> known;
  for (const Field& f : fields()) {
    const std::string path = std::string(f.section) + "." + f.key;
    known.insert(path);
    const auto value = tree.get_optional<std::string>(pt::ptree::path_type(std::string(f.section) + "/" + f.key, '/'));
    if (!value) continue;
    try {
      f.set(cfg, *value);
    } catch (const Error& e) {
      problems.push_back(path + ": " + e.what());
    }
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      problems.push_back("unknown top-level key '" + section + "'");
      continue;
    }
    for (const auto& [key, unused] : body) {
      if (!known.count(section + "." + key)) problems.push_back("unknown key '" + section + "." + key + "'");
    }
  }
  if (!problems.empty()) {
    std::string msg = "config has " + std::to_string(problems.size()) + " problem(s):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
  return cfg;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct SizeRow {
  std::size_t d_n[3], depth[3], heads[3];
  std::size_t m1, m2, d_in, d_out, epochs;
};

const std::map<Benchmark, SizeRow>& size_table() {
  static const std::map<Benchmark, SizeRow> table = {
      {Benchmark::kKs, {{4, 8, 32}, {2, 3, 6}, {2, 4, 8}, 64, 1, 10, 1, 100}},
      {Benchmark::kDarcy, {{24, 32, 128}, {2, 6, 8}, {2, 4, 8}, 12, 12, 1, 1, 200}},
      {Benchmark::kNs, {{16, 32, 32}, {2, 2, 4}, {2, 2, 4}, 12, 12, 10, 1, 100}},
      {Benchmark::kSw, {{8, 20, 24}, {2, 2, 3}, {2, 2, 4}, 12, 12, 20, 2, 100}},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  std::vector<std::string> problems;
  try {
    model.validate();
  } catch (const ValidationError& e) {
    problems.emplace_back(e.what());
  }
  if (n_train == 0) problems.emplace_back("run.n_train must be positive");
  if (train.epochs == 0) problems.emplace_back("run.epochs must be positive");
  if (train.batch_size == 0) problems.emplace_back("run.batch_size must be positive");
  if (train.eval_every == 0) problems.emplace_back("run.eval_every must be positive");
  if (train.step_size == 0) problems.emplace_back("optimizer.step_size must be positive");
  if (!(train.optimizer.lr >= 0.0)) problems.emplace_back("optimizer.lr must be non-negative");
  if (!(train.optimizer.weight_decay >= 0.0)) problems.emplace_back("optimizer.weight_decay must be non-negative");
  if (!(train.optimizer.beta1 >= 0.0 && train.optimizer.beta1 < 1.0)) problems.emplace_back("optimizer.beta1 must lie in [0, 1)");
  if (!(train.optimizer.beta2 >= 0.0 && train.optimizer.beta2 < 1.0)) problems.emplace_back("optimizer.beta2 must lie in [0, 1)");
  if (!(train.optimizer.eps > 0.0)) problems.emplace_back("optimizer.eps must be positive");
  if (!(train.gamma > 0.0)) problems.emplace_back("optimizer.gamma must be positive");
  if (!problems.empty()) {
    std::string msg = "run config is invalid:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
}

std::string to_ini(const RunConfig& cfg) { return write_ini(to_tree(cfg)); }

RunConfig parse_run_config(const std::string& ini_text) { return from_tree(read_ini(ini_text)); }

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_file(path)); }

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
  write_file(path, to_ini(cfg));
}

RunConfig run_preset(const std::string& name) {
  const auto dash = name.find('-');
  if (dash == std::string::npos) throw ValidationError("unknown preset '" + name + "'");
  const Benchmark bench = parse_benchmark(name.substr(0, dash));
  std::string rest = name.substr(dash + 1);
  bool full = false;
  if (rest.size() > 5 && rest.ends_with("-full")) {
    full = true;
    rest.resize(rest.size() - 5);
  }
  const int size = rest == "tiny" ? 0 : rest == "medium" ? 1 : rest == "large" ? 2 : -1;
  if (size < 0) throw ValidationError("unknown preset size '" + rest + "' (tiny, medium, large)");

  const SizeRow& row = size_table().at(bench);
  RunConfig cfg;
  cfg.benchmark = bench;
  cfg.preset = name;
  cfg.model.d_in = row.d_in;
  cfg.model.d_out = row.d_out;
  cfg.model.d_n = row.d_n[size];
  cfg.model.layers = row.depth[size];
  cfg.model.heads = row.heads[size];
  cfg.model.modes = {row.m1, row.m2};
  cfg.train.epochs = row.epochs;
  cfg.train.batch_size = 8;
  cfg.train.seed = 123;
  cfg.n_train = 32;
  cfg.n_test = 8;
  cfg.dataset = "data/" + to_string(bench) + "-desk.bin";
  cfg.out_dir = "runs/" + name;
  if (full) {
    cfg.train.epochs = 500;
    cfg.train.batch_size = 64;
    cfg.n_train = 1000;
    cfg.n_test = 200;
    cfg.dataset = "data/" + to_string(bench) + "-full.bin";
  }
  return cfg;
}

std::vector<std::string> run_preset_names() {
  std::vector<std::string> out;
  for (const auto& [bench, row] : size_table())
    for (const char* size : {"tiny", "medium", "large"}) {
      out.push_back(to_string(bench) + "-" + size);
      out.push_back(to_string(bench) + "-" + size + "-full");
    }
  return out;
}

TrajectoryDataset generate_dataset(Benchmark benchmark, const std::string& scale, std::uint64_t seed) {
  if (scale != "smoke" && scale != "desk" && scale != "full") {
    throw ValidationError("unknown dataset scale '" + scale + "' (smoke, desk, full)");
  }
  const std::size_t count = scale == "smoke" ? 6 : scale == "desk" ? 40 : 1200;
  switch (benchmark) {
    case Benchmark::kKs: {
      KsConfig c;
      c.seed = seed;
      c.n_traj = count;
      if (scale == "smoke") {
        c.resolution_sim = 128;
        c.resolution_out = 32;
      } else if (scale == "full") {
        c.resolution_sim = 1024;
        c.resolution_out = 256;
      }
      return generate_ks(c);
    }
    case Benchmark::kDarcy: {
      DarcyConfig c;
      c.seed = seed;
      c.n_samples = count;
      if (scale == "smoke") {
        c.resolution_solve = 33;
        c.resolution_out = 17;
      } else if (scale == "full") {
        c.resolution_solve = 241;
      }
      return generate_darcy(c);
    }
    case Benchmark::kNs: {
      NsConfig c;
      c.seed = seed;
      c.n_traj = count;
      if (scale == "smoke") {
        c.resolution_sim = 32;
        c.resolution_out = 16;
        c.dt = 1e-2;
      }
      return generate_ns(c);
    }
    case Benchmark::kSw:
      break;
  }
  throw ValidationError(
      "3dsw has no built-in generator: produce the shallow-water trajectories externally and "
      "write them as a DFTRAJ01 container (C = 2) readable by load_trajectories");
}

std::string file_checksum(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'F', 'C', 'K', 'P', 'T', '0', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}
  std::uint64_t u64() {
    std::uint64_t v = 0;
    std::memcpy(&v, take(8), 8);
    return v;
  }
  std::string str(std::size_t n) { return std::string(take(n), n); }
  const char* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw IoError(what_ + ": corrupt checkpoint (truncated)");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const NormPair& norm,
                     const DynFormer& model) {
  RunConfig manifest_cfg = cfg;
  manifest_cfg.model = model.config();
  pt::ptree tree = to_tree(manifest_cfg);
  tree.put(pt::ptree::path_type("norm/input_min", '/'), join(norm.input.u_min));
  tree.put(pt::ptree::path_type("norm/input_max", '/'), join(norm.input.u_max));
  tree.put(pt::ptree::path_type("norm/target_min", '/'), join(norm.target.u_min));
  tree.put(pt::ptree::path_type("norm/target_max", '/'), join(norm.target.u_max));
  const std::string manifest = write_ini(tree);

  std::string out(kCheckpointMagic, 8);
  put_u64(out, manifest.size());
  out += manifest;
  put_u64(out, model.parameters().size());
  for (const Parameter& p : model.parameters()) {
    put_u64(out, p.name().size());
    out += p.name();
    put_u64(out, p.size());
    out.append(reinterpret_cast<const char*>(p.value().data().data()), p.size() * sizeof(double));
  }
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  Reader r(bytes, path.string());
  if (r.str(8) != std::string(kCheckpointMagic, 8)) throw IoError(path.string() + ": not a DFCKPT01 checkpoint");
  const std::size_t manifest_len = r.u64();
  pt::ptree tree = read_ini(r.str(manifest_len));

  Checkpoint ck;
  const auto norm = tree.get_child_optional("norm");
  if (!norm) throw ValidationError(path.string() + ": manifest lacks normalization statistics");
  ck.norm.input = {parse_list(norm->get<std::string>("input_min")), parse_list(norm->get<std::string>("input_max"))};
  ck.norm.target = {parse_list(norm->get<std::string>("target_min")), parse_list(norm->get<std::string>("target_max"))};
  tree.erase("norm");
  ck.config = from_tree(tree);
  ck.config.model.validate();
  ck.model = std::make_unique<DynFormer>(ck.config.model, ck.config.train.seed);

  const std::size_t count = r.u64();
  if (count != ck.model->parameters().size()) {
    throw ValidationError(path.string() + ": checkpoint holds " + std::to_string(count) +
                          " tensors but its configuration defines " +
                          std::to_string(ck.model->parameters().size()));
  }
  for (std::size_t k = 0; k < count; ++k) {
    const std::string name = r.str(r.u64());
    const std::size_t n = r.u64();
    Parameter& p = ck.model->parameter(name);
    if (n != p.size()) {
      throw ValidationError(path.string() + ": tensor " + name + " holds " + std::to_string(n) +
                            " values, configuration expects " + std::to_string(p.size()));
    }
    std::memcpy(p.mutable_value().data().data(), r.take(n * sizeof(double)), n * sizeof(double));
  }
  if (!r.done()) throw IoError(path.string() + ": corrupt checkpoint (trailing bytes)");
  return ck;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<TrainRecord>& records) {
  std::string out = "epoch,train_loss,test_eps,lr,mulacc,params\n";
  for (const TrainRecord& r : records) {
    out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," +
           format_double(r.test_eps) + "," + format_double(r.lr) + "," + std::to_string(r.mulacc) +
           "," + std::to_string(r.params) + "\n";
  }
  write_file(path, out);
}

void write_timing_csv(const std::filesystem::path& path, const std::vector<TrainRecord>& records) {
  std::string out = "epoch,seconds\n";
  for (const TrainRecord& r : records) out += std::to_string(r.epoch) + "," + format_double(r.seconds) + "\n";
  write_file(path, out);
}

RunOutputs execute_run(RunConfig cfg, const EpochCallback& on_epoch, bool write_outputs) {
  cfg.validate();
  if (!std::filesystem::exists(cfg.dataset)) throw IoError("dataset not found: " + cfg.dataset);
  const std::string sum = file_checksum(cfg.dataset);
  if (!cfg.dataset_checksum.empty() && cfg.dataset_checksum != sum) {
    throw ValidationError("dataset " + cfg.dataset + " has checksum " + sum + ", the configuration expects " +
                          cfg.dataset_checksum);
  }
  cfg.dataset_checksum = sum;
  const TrajectoryDataset data = load_trajectories(cfg.dataset);
  if (data.benchmark != cfg.benchmark) {
    throw ValidationError("dataset " + cfg.dataset + " holds " + to_string(data.benchmark) +
                          " data but the configuration is for " + to_string(cfg.benchmark));
  }
  const std::size_t width = model_input_width(data);
  if (cfg.model.d_in != width || cfg.model.d_out != data.channels) {
    throw ValidationError("model maps " + std::to_string(cfg.model.d_in) + " -> " + std::to_string(cfg.model.d_out) +
                          " channels but the dataset needs " + std::to_string(width) + " -> " +
                          std::to_string(data.channels));
  }

  RunOutputs out;
  out.model = std::make_unique<DynFormer>(cfg.model, cfg.train.seed);
  TrainResult result = train(*out.model, data, make_split(data.samples.size(), cfg.n_train, cfg.n_test),
                             cfg.train, on_epoch);
  out.records = std::move(result.records);
  out.norm = result.norm;

  if (write_outputs) {
    const std::filesystem::path dir(cfg.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_metrics_csv(dir / "metrics.csv", out.records);
    write_timing_csv(dir / "timing.csv", out.records);
    save_checkpoint(dir / "checkpoint.bin", cfg, out.norm, *out.model);
    save_run_config(cfg, dir / "manifest.ini");
  }
  return out;
}

}  // namespace dynformer
