#pragma once

// Command-line front end: generate, train, assimilate, bench.

#include "mfda/bench.hpp"
#include "mfda/config.hpp"
#include "mfda/experiment.hpp"
#include "mfda/io.hpp"
#include "mfda/pipeline.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace mfda::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kData = 3,
  kNumerical = 4,
  kCriterion = 5,
  kUsage = 64,
};

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  bool dump_ensembles = false;
  std::string data;    // train
  std::string bundle;  // assimilate
  std::string stream;  // assimilate
  std::string suite;   // bench
  int trials = 1000;   // bench
};

inline void note(const std::string& msg) { std::cerr << "mfda: " << msg << std::endl; }

inline ExperimentConfig load_config(const Options& o) {
  ExperimentConfig cfg = read_config(o.config);
  if (o.seed) cfg = with_seed(cfg, *o.seed);
  return cfg;
}

inline std::string config_hash(const ExperimentConfig& cfg) {
  return io::hex64(io::fnv1a(config_to_json(cfg).dump()));
}

inline json seed_manifest(const ExperimentConfig& cfg) {
  return json{{"dataset_seed", cfg.seed},
              {"test_seed", cfg.test_seed},
              {"pipeline_seed", cfg.pipeline.seed},
              {"regressor_seed", cfg.pipeline.regressor ? cfg.pipeline.regressor->seed : cfg.pipeline.seed},
              {"rng", "mt19937_64 seeded by splitmix64(base, stream, role)"}};
}

/// Resolved config and seed manifest, present in every output directory.
inline void write_provenance(const fs::path& out, const ExperimentConfig& cfg) {
  fs::create_directories(out);
  io::write_file_atomic(out / "resolved_config.json", config_to_json(cfg).dump(2) + "\n");
  io::write_file_atomic(out / "seeds.json", seed_manifest(cfg).dump(2) + "\n");
}

inline fs::path training_dir(const fs::path& data) {
  return fs::exists(data / "train" / "manifest.json") ? data / "train" : data;
}

// ---------------------------------------------------------------------------

inline int cmd_generate(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  const fs::path out(o.out);
  auto t0 = std::chrono::steady_clock::now();
  const TrajectorySet train = make_training_set(cfg);
  note("generated " + std::to_string(train.size()) + " trajectories of " +
       std::to_string(train.length()) + " steps in " + bench::fmt(seconds_since(t0), 3) + " s");
  write_provenance(out, cfg);
  const std::string model = to_string(cfg.model.kind());
  io::write_dataset(out / "train", train, model);
  if (cfg.test_length > 0) {
    TrajectorySet test;
    test.seed = cfg.test_seed;
    test.trajectories.push_back(make_test_trajectory(cfg));
    io::write_dataset(out / "test", test, model);
  }
  return kOk;
}

inline int cmd_train(const Options& o) {
  ExperimentConfig cfg = load_config(o);
  const TrajectorySet data = io::read_dataset(training_dir(o.data));
  if (data.state_dim() != cfg.model.state_dim() ||
      data.observation_dim() != cfg.observation.observation_dim())
    throw DataError("dataset dimensions (" + std::to_string(data.state_dim()) + ", " +
                    std::to_string(data.observation_dim()) + ") do not match the config (" +
                    std::to_string(cfg.model.state_dim()) + ", " +
                    std::to_string(cfg.observation.observation_dim()) + ")");
  const FnnResult fnn = resolve_delay_from_data(cfg, data);
  if (!fnn.achieved) note("warning: false-neighbour threshold not reached; using d = " + std::to_string(fnn.delay));
  if (data.length() <= cfg.pipeline.delay + 1)
    note("warning: trajectories of length " + std::to_string(data.length()) +
         " leave very few delay pairs for d = " + std::to_string(cfg.pipeline.delay));
  auto t0 = std::chrono::steady_clock::now();
  const SurrogateBundle bundle = offline(data, cfg.pipeline);
  const double secs = seconds_since(t0);
  note("offline " + to_string(bundle.method) + " finished in " + bench::fmt(secs, 3) + " s");
  if (bundle.dmd)
    note("dmd effective rank " + std::to_string(bundle.dmd->effective_rank) + ", pairs " +
         std::to_string(bundle.dmd->pair_count));
  for (const auto& w : bundle.report.warnings) note("warning: " + w);

  json report{{"method", to_string(bundle.method)},
              {"reconstruction", to_string(bundle.reconstruction)},
              {"delay", bundle.delay},
              {"delay_selection", cfg.delay_auto || fnn.delay != cfg.pipeline.delay ? "fnn" : "fixed"},
              {"costs", bundle.report.costs},
              {"regressor_mse", bundle.report.regressor_mse},
              {"reconstruction_pairs", bundle.report.reconstruction_pairs},
              {"warnings", bundle.report.warnings},
              {"seconds", secs},
              {"dataset_seed", data.seed}};
  if (bundle.method == SurrogateMethod::kDmdT) {
    // Distance of every refinement iterate to the operator fitted on
    // noiseless observations of the same trajectories.
    const DmdOperator ref = reference_operator(data, cfg.observation, bundle.dmd->dictionary);
    json errors = json::array();
    for (const auto& op : bundle.dmd_history) errors.push_back(operator_error(op.k_y, ref.k_y));
    report["operator_errors"] = errors;
    report["effective_rank"] = bundle.dmd->effective_rank;
  }
  if (bundle.regressor) report["loss_history"] = bundle.regressor->loss_history;

  const fs::path out(o.out);
  write_provenance(out, cfg);
  io::write_bundle(out / "bundle.json", bundle);
  io::write_file_atomic(out / "train_report.json", report.dump(2) + "\n");
  return kOk;
}

namespace detail {

inline std::optional<Matrix> read_truth(const fs::path& path, Index n) {
  const io::Table t = io::read_table(path);
  std::vector<Index> cols;
  for (std::size_t i = 0; i < t.columns.size(); ++i)
    if (!t.columns[i].empty() && t.columns[i][0] == 'x') cols.push_back(static_cast<Index>(i));
  if (cols.empty()) return std::nullopt;
  if (static_cast<Index>(cols.size()) != n)
    throw DataError(path.string() + ": has " + std::to_string(cols.size()) +
                    " state columns, the model has " + std::to_string(n));
  Matrix x(t.values.rows(), n);
  for (Index c = 0; c < n; ++c) x.col(c) = t.values.col(cols[static_cast<std::size_t>(c)]);
  return x;
}

inline io::Table estimates_table(const std::vector<PosteriorStateEstimate>& est, Index n) {
  io::Table t;
  t.columns = {"k"};
  for (const auto& c : io::indexed_names("mean", n)) t.columns.push_back(c);
  for (const auto& c : io::indexed_names("spread", n)) t.columns.push_back(c);
  t.values.resize(static_cast<Index>(est.size()), 1 + 2 * n);
  for (std::size_t i = 0; i < est.size(); ++i) {
    const auto r = static_cast<Index>(i);
    t.values(r, 0) = static_cast<double>(est[i].time_index);
    t.values.row(r).segment(1, n) = est[i].mean.transpose();
    t.values.row(r).segment(1 + n, n) = est[i].covariance.diagonal().cwiseMax(0.0).cwiseSqrt().transpose();
  }
  return t;
}

/// One-dimensional marginal densities of every state component.
inline std::pair<io::Table, json> kde_table(const Matrix& samples, Index points) {
  const Index n = samples.cols();
  const Vector h = silverman_bandwidth(samples);
  io::Table t;
  t.values.resize(points, 2 * n);
  json bw = json::array();
  for (Index c = 0; c < n; ++c) {
    t.columns.push_back("x" + std::to_string(c));
    t.columns.push_back("density" + std::to_string(c));
    const double lo = samples.col(c).minCoeff() - 4.0 * h[c];
    const double hi = samples.col(c).maxCoeff() + 4.0 * h[c];
    const Matrix grid = linspace_grid(lo, hi, points);
    t.values.col(2 * c) = grid.col(0);
    t.values.col(2 * c + 1) = kde_eval(samples.col(c), h[c], grid);
    bw.push_back(h[c]);
  }
  return {t, bw};
}

}  // namespace detail

inline int cmd_assimilate(const Options& o) {
  ExperimentConfig cfg = load_config(o);
  const SurrogateBundle bundle = io::read_bundle(o.bundle);
  if (bundle.method != cfg.pipeline.method)
    throw ConfigError("bundle method " + to_string(bundle.method) + " does not match config method " +
                      to_string(cfg.pipeline.method));
  if (bundle.observation_dim != cfg.observation.observation_dim() ||
      bundle.state_dim != cfg.model.state_dim())
    throw DataError("bundle dimensions do not match the config");
  // The bundle fixes the delay (it may have been chosen by FNN at training).
  resolve_delay(cfg, bundle.delay);
  const Matrix y = io::read_observation_stream(o.stream);
  if (y.cols() != bundle.observation_dim)
    throw DataError(o.stream + ": stream has " + std::to_string(y.cols()) +
                    " observation columns, the bundle expects " + std::to_string(bundle.observation_dim));
  const std::optional<Matrix> truth = detail::read_truth(o.stream, bundle.state_dim);

  const fs::path out(o.out);
  json metrics{{"config_hash", config_hash(cfg)},
               {"seeds", seed_manifest(cfg)},
               {"method", to_string(bundle.method)},
               {"reconstruction", to_string(bundle.reconstruction)},
               {"delay", bundle.delay},
               {"stream", o.stream},
               {"stream_hash", io::file_hash(o.stream)},
               {"steps", y.rows()}};
  if (y.rows() == 0) {
    note("warning: empty observation stream; no estimates produced");
    metrics["metrics_available"] = false;
    write_provenance(out, cfg);
    io::write_file_atomic(out / "metrics.json", metrics.dump(2) + "\n");
    return kOk;
  }

  cfg.pipeline.keep_samples = o.dump_ensembles || !cfg.kde_times.empty();
  auto t0 = std::chrono::steady_clock::now();
  const OnlineResult res = online(bundle, y, cfg.pipeline, cfg.test_seed);
  const double secs = seconds_since(t0);
  note("online assimilation of " + std::to_string(y.rows()) + " steps in " + bench::fmt(secs, 3) + " s");

  write_provenance(out, cfg);
  io::write_table(out / "estimates.tsv", detail::estimates_table(res.estimates, bundle.state_dim));
  {
    io::Table t;
    t.columns = {"k"};
    for (const auto& c : io::indexed_names("mean", bundle.observation_dim)) t.columns.push_back(c);
    t.columns.push_back("spread");
    t.values.resize(y.rows(), bundle.observation_dim + 2);
    for (Index k = 0; k < y.rows(); ++k) t.values(k, 0) = static_cast<double>(k);
    t.values.middleCols(1, bundle.observation_dim) = res.observation_means;
    t.values.col(bundle.observation_dim + 1) = res.observation_spreads;
    io::write_table(out / "filtered_observations.tsv", t);
  }
  if (o.dump_ensembles) {
    fs::create_directories(out / "ensembles");
    for (const auto& e : res.estimates) {
      io::Table t{io::indexed_names("x", bundle.state_dim), e.samples};
      char name[32];
      std::snprintf(name, sizeof name, "k_%06lld.tsv", static_cast<long long>(e.time_index));
      io::write_table(out / "ensembles" / name, t);
    }
  }
  json kde = json::array();
  for (double t : cfg.kde_times) {
    const Index k = time_to_step(t, cfg.model.dt, y.rows());
    const auto it = std::find_if(res.estimates.begin(), res.estimates.end(),
                                 [&](const auto& e) { return e.time_index == k; });
    if (it == res.estimates.end()) {
      note("warning: no estimate at t = " + bench::fmt(t) + " (step " + std::to_string(k) + ")");
      continue;
    }
    auto [table, bw] = detail::kde_table(it->samples, cfg.kde_grid_points);
    char name[48];
    std::snprintf(name, sizeof name, "kde_k%06lld.tsv", static_cast<long long>(k));
    io::write_table(out / name, table);
    kde.push_back({{"time", t}, {"step", k}, {"file", name}, {"bandwidth", bw},
                   {"rule", "silverman"}});
  }
  metrics["kde"] = kde;
  metrics["window_updates"] = res.window_updates;
  metrics["degenerate_windows"] = res.degenerate_windows;
  metrics["seconds"] = secs;
  if (truth) {
    if (truth->rows() != y.rows()) throw DataError(o.stream + ": ragged state columns");
    const Metrics m = compute_metrics(res.estimates, *truth);
    metrics["metrics_available"] = true;
    metrics["rmse"] = m.rmse;
    metrics["spread"] = m.spread;
    metrics["scored_steps"] = m.steps;
    metrics["first_scored_step"] = bundle.delay - 1;
  } else {
    metrics["metrics_available"] = false;
    note("stream has no state columns; metrics not computed");
  }
  io::write_file_atomic(out / "metrics.json", metrics.dump(2) + "\n");
  return kOk;
}

inline int cmd_bench(const Options& o) {
  bench::BenchOptions opt;
  if (o.seed) {
    opt.seeds.clear();
    opt.lorenz_seeds.clear();
    for (std::uint64_t i = 0; i < 5; ++i) opt.seeds.push_back(*o.seed + i);
    for (std::uint64_t i = 0; i < 3; ++i) opt.lorenz_seeds.push_back(*o.seed + i);
  }
  opt.invariant_trials = o.trials;
  const auto& names = bench::suite_names();
  if (std::find(names.begin(), names.end(), o.suite) == names.end()) {
    note("unknown suite '" + o.suite + "' (expected pendulum, triad, lorenz63, allen_cahn or properties)");
    return kUsage;
  }
  const bench::SuiteReport rep = bench::run_suite(o.suite, opt);
  for (const auto& c : rep.criteria) std::cout << c.line() << "\n";
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    json j = rep.to_json();
    j["seeds"] = opt.seeds;
    io::write_file_atomic(fs::path(o.out) / "bench_report.json", j.dump(2) + "\n");
  }
  return rep.pass() ? kOk : kCriterion;
}

// ---------------------------------------------------------------------------

inline int run(int argc, char** argv) {
  CLI::App app{"model-free data assimilation with surrogate dynamics and delay-embedding reconstruction", "mfda"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "experiment config (JSON)");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory")->required(needs_config);
    sub->add_option("--seed", seed, "base seed (overrides the config)");
    sub->add_option("--threads", o.threads, "worker thread cap (0: hardware)");
    sub->add_flag("--dump-ensembles", o.dump_ensembles, "write every posterior ensemble");
  };
  auto* gen = app.add_subcommand("generate", "simulate training and test trajectories");
  common(gen, true);
  auto* train = app.add_subcommand("train", "build the surrogate and reconstruction map");
  common(train, true);
  train->add_option("--data", o.data, "dataset directory from 'generate'")->required()->check(CLI::ExistingDirectory);
  auto* assim = app.add_subcommand("assimilate", "filter an observation stream");
  common(assim, true);
  assim->add_option("--bundle", o.bundle, "bundle file from 'train'")->required()->check(CLI::ExistingFile);
  assim->add_option("--stream", o.stream, "observation table (y columns, optional x columns)")
      ->required()
      ->check(CLI::ExistingFile);
  auto* bench_cmd = app.add_subcommand("bench", "run an acceptance suite");
  common(bench_cmd, false);
  bench_cmd->add_option("suite", o.suite, "pendulum, triad, lorenz63, allen_cahn or properties")->required();
  bench_cmd->add_option("--trials", o.trials, "randomized trials per invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  if (gen->count("--seed") + train->count("--seed") + assim->count("--seed") + bench_cmd->count("--seed"))
    o.seed = seed;
  if (o.threads) set_thread_cap(o.threads);

  try {
    if (*gen) return cmd_generate(o);
    if (*train) return cmd_train(o);
    if (*assim) return cmd_assimilate(o);
    return cmd_bench(o);
  } catch (const ConfigError& e) {
    note("config error: " + std::string(e.what()));
    return kConfig;
  } catch (const FilterDivergence& e) {
    note("numerical failure: " + std::string(e.what()));
    return kNumerical;
  } catch (const NumericalError& e) {
    note("numerical failure: " + std::string(e.what()));
    return kNumerical;
  } catch (const DataError& e) {
    note("data error: " + std::string(e.what()));
    return kData;
  } catch (const ContractViolation& e) {
    note("invalid input: " + std::string(e.what()));
    return kData;
  } catch (const std::exception& e) {
    note("error: " + std::string(e.what()));
    return kInternal;
  }
}

}  // namespace mfda::cli
