#include "mfda/bench.hpp"
#include "mfda/cli.hpp"
#include "mfda/io.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace mfda;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mfda_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MFDA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kSmallConfig = R"({
  "schema_version": 1,
  "name": "smoke",
  "model": {"kind": "pendulum", "dt": 0.05, "params": {"sqrt_dt_noise": true}},
  "observation": {"kind": "selector", "indices": [1], "noise_variance": 0.1},
  "initial_condition": {"mean": [0.0, 0.0], "stddev": [0.3, 0.6]},
  "dataset": {"trajectories": 3, "length": 50, "seed": 4},
  "test": {"length": 40, "seed": 9},
  "filter": {"ensemble_size": 20},
  "surrogate": {"method": "dmd_t", "iterations": 1},
  "embedding": {"delay": 3},
  "reconstruction": {"kind": "nn", "epochs": 5, "hidden": [8]},
  "output": {"kde_times": [1.0]}
}
)";

}  // namespace

TEST(Io, TableRoundTrip) {
  io::Table t;
  t.columns = {"a", "b"};
  t.values.resize(3, 2);
  t.values << 1.0, -2.5e-300, 0.1, 1.0 / 3.0, 12345.678, -0.0;
  const io::Table back = io::parse_table(io::format_table(t), "mem");
  EXPECT_EQ(back.columns, t.columns);
  EXPECT_EQ(back.values, t.values);
  EXPECT_THROW(io::parse_table("a\tb\n1\n", "mem"), DataError);
  EXPECT_THROW(io::parse_table("a\n1x\n", "mem"), DataError);
}

TEST(Io, DatasetRoundTripAndCorruption) {
  const fs::path dir = scratch_dir("dataset");
  InitialConditionSampler ic;
  ic.mean = Vector::Zero(2);
  ic.stddev = Vector::Constant(2, 0.5);
  const auto obs = ObservationSpec::selector(2, {1}, Matrix::Constant(1, 1, 0.1));
  const TrajectorySet set = generate_dataset(ModelSpec{PendulumParams{}, 0.05}, obs, 2, 30, ic, 3);
  io::write_dataset(dir, set, "pendulum");
  const TrajectorySet back = io::read_dataset(dir);
  ASSERT_EQ(back.size(), 2);
  EXPECT_EQ(back.trajectories[1].states, set.trajectories[1].states);
  EXPECT_EQ(back.trajectories[1].observations, set.trajectories[1].observations);
  std::ofstream(dir / io::trajectory_file_name(0), std::ios::app) << "0\t0\t0\n";
  EXPECT_THROW(io::read_dataset(dir), DataError);
  fs::remove_all(dir);
}

TEST(Io, BundleRoundTrip) {
  InitialConditionSampler ic;
  ic.mean = Vector::Zero(2);
  ic.stddev = Vector::Constant(2, 0.5);
  const auto obs = ObservationSpec::selector(2, {1}, Matrix::Constant(1, 1, 0.1));
  const TrajectorySet data = generate_dataset(ModelSpec{PendulumParams{}, 0.05}, obs, 2, 40, ic, 3);
  for (auto method : {SurrogateMethod::kDmdT, SurrogateMethod::kKnnT}) {
    PipelineConfig cfg;
    cfg.method = method;
    cfg.delay = 3;
    cfg.ensemble_size = 10;
    cfg.refine_iterations = 1;
    cfg.transition_neighbors = 5;
    RegressorSpec s;
    s.hidden = {4};
    s.epochs = 2;
    cfg.regressor = s;
    const SurrogateBundle b = offline(data, cfg);
    const std::string text = io::bundle_to_json(b).dump();
    const SurrogateBundle back = io::bundle_from_json(json::parse(text));
    EXPECT_EQ(io::bundle_to_json(back).dump(), text);
    const Matrix q = Matrix::Constant(4, 3, 0.2);
    EXPECT_EQ(reconstruct_states(back, q), reconstruct_states(b, q));
  }
  EXPECT_THROW(io::bundle_from_json(json::parse(R"({"format": "nope"})")), DataError);
}

TEST(Config, UnknownKeyIsAnchoredToItsLine) {
  const std::string text =
      "{\n  \"schema_version\": 1,\n  \"model\": {\"kind\": \"pendulum\", \"dt\": 0.05},\n"
      "  \"observation\": {\"kind\": \"selector\", \"indices\": [1], \"noise_variance\": 0.1},\n"
      "  \"filter\": {\"ensemble_sise\": 10}\n}\n";
  try {
    parse_config(text, "cfg.json");
    FAIL() << "expected a config error";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("cfg.json:5"), std::string::npos) << msg;
    EXPECT_NE(msg.find("ensemble_sise"), std::string::npos) << msg;
  }
  EXPECT_THROW(parse_config("{\"schema_version\": 2}"), ConfigError);
  EXPECT_THROW(parse_config("{ not json"), ConfigError);
}

TEST(Config, ResolvedConfigRoundTrips) {
  const ExperimentConfig cfg = parse_config(kSmallConfig);
  const std::string resolved = config_to_json(cfg).dump();
  EXPECT_EQ(config_to_json(parse_config(resolved)).dump(), resolved);
  EXPECT_EQ(cfg.pipeline.delay, 3);
  EXPECT_EQ(cfg.trajectories, 3);
}

TEST(Config, ShippedConfigsMatchBenchPresets) {
  for (const std::string name : {"pendulum", "triad", "lorenz63", "allen_cahn"}) {
    const ExperimentConfig file = read_config(fs::path(MFDA_CONFIG_DIR) / (name + ".json"));
    EXPECT_EQ(config_to_json(file).dump(1), config_to_json(bench::preset(name)).dump(1)) << name;
  }
  EXPECT_NO_THROW(read_config(fs::path(MFDA_CONFIG_DIR) / "properties.json"));
}

TEST(Cli, MinimalGenerate) {
  const fs::path dir = scratch_dir("cli_min");
  std::string text = kSmallConfig;
  const std::string from = "\"trajectories\": 3, \"length\": 50";
  text.replace(text.find(from), from.size(), "\"trajectories\": 1, \"length\": 2");
  write_text(dir / "min.json", text);
  ASSERT_EQ(run_cli("generate --config " + (dir / "min.json").string() + " --out " + (dir / "out").string()), 0);
  const TrajectorySet set = io::read_dataset(dir / "out" / "train");
  EXPECT_EQ(set.size(), 1);
  EXPECT_EQ(set.length(), 2);
  EXPECT_TRUE(fs::exists(dir / "out" / "resolved_config.json"));
  EXPECT_TRUE(fs::exists(dir / "out" / "seeds.json"));
  fs::remove_all(dir);
}

TEST(Cli, EndToEnd) {
  const fs::path dir = scratch_dir("cli_e2e");
  const std::string cfg = (dir / "small.json").string();
  write_text(dir / "small.json", kSmallConfig);
  const std::string a = (dir / "a").string(), b = (dir / "b").string();
  ASSERT_EQ(run_cli("generate --config " + cfg + " --out " + a), 0);
  ASSERT_EQ(run_cli("generate --config " + cfg + " --out " + b), 0);
  for (const char* f : {"train/traj_0000.tsv", "train/traj_0002.tsv", "test/traj_0000.tsv", "resolved_config.json"})
    EXPECT_EQ(io::file_hash(fs::path(a) / f), io::file_hash(fs::path(b) / f)) << f;
  ASSERT_EQ(run_cli("generate --config " + cfg + " --seed 77 --out " + (dir / "c").string()), 0);
  EXPECT_NE(io::file_hash(fs::path(a) / "train/traj_0000.tsv"),
            io::file_hash(dir / "c" / "train/traj_0000.tsv"));

  const std::string model = (dir / "model").string();
  ASSERT_EQ(run_cli("train --config " + cfg + " --data " + a + " --out " + model), 0);
  EXPECT_TRUE(fs::exists(fs::path(model) / "bundle.json"));
  EXPECT_TRUE(fs::exists(fs::path(model) / "train_report.json"));

  const std::string est = (dir / "est").string();
  const std::string stream = (fs::path(a) / "test" / "traj_0000.tsv").string();
  ASSERT_EQ(run_cli("assimilate --config " + cfg + " --bundle " + model + "/bundle.json --stream " +
                    stream + " --out " + est + " --dump-ensembles"),
            0);
  const io::Table t = io::read_table(fs::path(est) / "estimates.tsv");
  EXPECT_EQ(t.values.rows(), 38);
  const json metrics = json::parse(io::read_file(fs::path(est) / "metrics.json"));
  EXPECT_TRUE(metrics.at("metrics_available").get<bool>());
  EXPECT_GT(metrics.at("rmse").get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(fs::path(est) / "kde_k000020.tsv"));
  EXPECT_TRUE(fs::exists(fs::path(est) / "ensembles"));

  // Rerun into a fresh directory: identical outputs.
  const std::string est2 = (dir / "est2").string();
  ASSERT_EQ(run_cli("assimilate --config " + cfg + " --bundle " + model + "/bundle.json --stream " +
                    stream + " --out " + est2),
            0);
  EXPECT_EQ(io::file_hash(fs::path(est) / "estimates.tsv"), io::file_hash(fs::path(est2) / "estimates.tsv"));

  // Empty stream: success with metrics marked absent.
  write_text(dir / "empty.tsv", "# mfda-table 1\ny0\n");
  ASSERT_EQ(run_cli("assimilate --config " + cfg + " --bundle " + model + "/bundle.json --stream " +
                    (dir / "empty.tsv").string() + " --out " + (dir / "empty").string()),
            0);
  EXPECT_FALSE(json::parse(io::read_file(dir / "empty" / "metrics.json")).at("metrics_available").get<bool>());

  // Dimension mismatch: data error, nothing written.
  write_text(dir / "wide.tsv", "# mfda-table 1\ny0\ty1\n1\t2\n");
  EXPECT_EQ(run_cli("assimilate --config " + cfg + " --bundle " + model + "/bundle.json --stream " +
                    (dir / "wide.tsv").string() + " --out " + (dir / "wide").string()),
            cli::kData);
  EXPECT_FALSE(fs::exists(dir / "wide" / "estimates.tsv"));

  // Corrupt dataset: data error and no bundle.
  std::ofstream(fs::path(a) / "train" / "traj_0001.tsv", std::ios::app) << "garbage\n";
  EXPECT_EQ(run_cli("train --config " + cfg + " --data " + a + " --out " + (dir / "bad").string()), cli::kData);
  EXPECT_FALSE(fs::exists(dir / "bad" / "bundle.json"));
  fs::remove_all(dir);
}

TEST(Cli, ErrorCodes) {
  const fs::path dir = scratch_dir("cli_err");
  write_text(dir / "bad.json", "{\n  \"schema_version\": 1,\n  \"bogus\": 3\n}\n");
  EXPECT_EQ(run_cli("generate --config " + (dir / "bad.json").string() + " --out " + (dir / "o").string()),
            cli::kConfig);
  EXPECT_EQ(run_cli("bench no_such_suite"), cli::kUsage);
  EXPECT_EQ(run_cli("frobnicate"), cli::kUsage);
  EXPECT_EQ(run_cli("bench properties --trials 20 --out " + (dir / "bench").string()), cli::kOk);
  const json rep = json::parse(io::read_file(dir / "bench" / "bench_report.json"));
  EXPECT_EQ(rep.at("criteria").size(), 3u);
  fs::remove_all(dir);
}
