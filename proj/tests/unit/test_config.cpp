#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dynformer/config.hpp"
#include "dynformer/error.hpp"

using namespace dynformer;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "dynformer_config_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("run config INI round trip is exact") {
  RunConfig c = run_preset("2dns-medium");
  c.train.optimizer.lr = 0.1 + 0.2;  // not representable in few digits
  c.train.gamma = 1.0 / 3.0;
  c.model.ablation.mixing = Mixing::kGlobalOnly;
  c.model.ablation.flow = Flow::kParallel;
  c.dataset_checksum = "00ff";
  const RunConfig back = parse_run_config(to_ini(c));
  CHECK(back.model == c.model);
  CHECK(back.train.optimizer.lr == c.train.optimizer.lr);
  CHECK(back.train.gamma == c.train.gamma);
  CHECK(to_ini(back) == to_ini(c));

  save_run_config(c, scratch("rt.ini"));
  CHECK(to_ini(load_run_config(scratch("rt.ini"))) == to_ini(c));
}

TEST_CASE("config parsing reports every problem") {
  const std::string text =
      "[run]\npreset = 2ddarcy-tiny\nepochs = ten\nbogus = 1\n"
      "[model]\nmodes = 12\n"
      "[ablation]\nflow = sideways\n";
  try {
    parse_run_config(text);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("4 problem") != std::string::npos);
    CHECK(msg.find("run.epochs") != std::string::npos);
    CHECK(msg.find("run.bogus") != std::string::npos);
    CHECK(msg.find("model.modes") != std::string::npos);
    CHECK(msg.find("ablation.flow") != std::string::npos);
  }

  // Presets supply defaults; explicit keys override them.
  const RunConfig c = parse_run_config("[run]\npreset = 2ddarcy-tiny\nepochs = 3\n[ablation]\nflow = sequential\n");
  CHECK(c.model.d_n == 24);
  CHECK(c.train.epochs == 3);
  CHECK(c.model.ablation.flow == Flow::kHierarchical);

  RunConfig bad = c;
  bad.train.batch_size = 0;
  bad.train.optimizer.beta1 = 1.0;
  bad.model.heads = 5;
  try {
    bad.validate();
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("batch_size") != std::string::npos);
    CHECK(msg.find("beta1") != std::string::npos);
    CHECK(msg.find("head") != std::string::npos);
  }
}

TEST_CASE("presets follow the reference settings table") {
  const RunConfig ks = run_preset("1dks-tiny");
  CHECK(ks.model.d_n == 4);
  CHECK(ks.model.layers == 2);
  CHECK(ks.model.heads == 2);
  CHECK(ks.model.modes == ModeSet{64, 1});
  const RunConfig darcy = run_preset("2ddarcy-medium");
  CHECK(darcy.model.d_n == 32);
  CHECK(darcy.model.layers == 6);
  CHECK(darcy.model.heads == 4);
  CHECK(darcy.model.modes == ModeSet{12, 12});
  const RunConfig ns = run_preset("2dns-large");
  CHECK(ns.model.d_n == 32);
  CHECK(ns.model.layers == 4);
  CHECK(ns.model.heads == 4);
  const RunConfig sw = run_preset("3dsw-large-full");
  CHECK(sw.model.d_n == 24);
  CHECK(sw.model.layers == 3);
  CHECK(sw.model.d_out == 2);
  CHECK(sw.train.epochs == 500);
  CHECK(sw.train.batch_size == 64);
  CHECK(sw.n_train == 1000);
  CHECK(sw.n_test == 200);
  for (const std::string& name : run_preset_names()) {
    const RunConfig c = run_preset(name);
    CHECK_NOTHROW(c.validate());
    CHECK(c.train.optimizer.lr == 1e-3);
    CHECK(c.train.gamma == 0.97);
    CHECK(c.train.step_size == 7);
    if (name.find("full") == std::string::npos) {
      CHECK(c.train.batch_size <= 16);
      CHECK(c.n_train + c.n_test <= 64);
    }
  }
  CHECK(run_preset_names().size() == 24);
  CHECK_THROWS_AS(run_preset("2ddarcy-huge"), ValidationError);
  CHECK_THROWS_AS(run_preset("5dx-tiny"), ValidationError);
}

TEST_CASE("dataset generation presets") {
  const TrajectoryDataset d = generate_dataset(Benchmark::kDarcy, "smoke", 3);
  CHECK(d.samples.size() == 6);
  CHECK(d.s1 == 17);
  CHECK_THROWS_AS(generate_dataset(Benchmark::kSw, "desk", 1), ValidationError);
  try {
    generate_dataset(Benchmark::kSw, "desk", 1);
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("load_trajectories") != std::string::npos);
  }
  CHECK_THROWS_AS(generate_dataset(Benchmark::kKs, "enormous", 1), ValidationError);

  save_trajectories(d, scratch("a.bin"));
  save_trajectories(generate_dataset(Benchmark::kDarcy, "smoke", 3), scratch("b.bin"));
  CHECK(file_checksum(scratch("a.bin")) == file_checksum(scratch("b.bin")));
  CHECK(file_checksum(scratch("a.bin")).size() == 16);
}

TEST_CASE("checkpoint round trip") {
  RunConfig c = run_preset("2ddarcy-tiny");
  c.model.d_n = 8;
  c.model.modes = {3, 3};
  DynFormer model(c.model, 42);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (Parameter& p : model.parameters())
    for (double& v : p.mutable_value().data()) v = n(rng);
  const NormPair norm{{{3.0}, {12.0}}, {{0.0}, {0.1 + 0.2}}};

  save_checkpoint(scratch("m.ckpt"), c, norm, model);
  const Checkpoint ck = load_checkpoint(scratch("m.ckpt"));
  CHECK(ck.config.model == c.model);
  CHECK(ck.norm.target.u_max[0] == 0.1 + 0.2);
  REQUIRE(ck.model->parameters().size() == model.parameters().size());
  for (std::size_t k = 0; k < model.parameters().size(); ++k) {
    CHECK(ck.model->parameters()[k].name() == model.parameters()[k].name());
    CHECK(ck.model->parameters()[k].value().vec() == model.parameters()[k].value().vec());
  }
  const Tensor x = Tensor({1, 12, 12, 1}, 0.5);
  CHECK(ck.model->predict(x).vec() == model.predict(x).vec());

  save_checkpoint(scratch("m2.ckpt"), ck.config, ck.norm, *ck.model);
  CHECK(slurp(scratch("m.ckpt")) == slurp(scratch("m2.ckpt")));

  const std::string bytes = slurp(scratch("m.ckpt"));
  {
    std::ofstream out(scratch("cut.ckpt"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
  }
  CHECK_THROWS_AS(load_checkpoint(scratch("cut.ckpt")), IoError);
  CHECK_THROWS_AS(load_checkpoint(scratch("absent.ckpt")), IoError);
}

TEST_CASE("metrics and timing CSVs") {
  std::vector<TrainRecord> recs(2);
  recs[0] = {1, 0.5, 0.25, 1e-3, 1.5, 100, 10};
  recs[1] = {2, 0.1 + 0.2, 0.2, 1e-3, 1.25, 100, 10};
  write_metrics_csv(scratch("m.csv"), recs);
  write_timing_csv(scratch("t.csv"), recs);
  CHECK(slurp(scratch("m.csv")) ==
        "epoch,train_loss,test_eps,lr,mulacc,params\n1,0.5,0.25,0.001,100,10\n"
        "2,0.30000000000000004,0.2,0.001,100,10\n");
  CHECK(slurp(scratch("t.csv")) == "epoch,seconds\n1,1.5\n2,1.25\n");
}
