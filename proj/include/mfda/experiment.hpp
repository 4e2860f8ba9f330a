#pragma once

// End-to-end runs driven by an ExperimentConfig: dataset generation, delay
// selection, offline construction, online assimilation and the true-model
// EnKF baseline.

#include "mfda/config.hpp"
#include "mfda/embedding.hpp"
#include "mfda/models.hpp"
#include "mfda/pipeline.hpp"

#include <chrono>
#include <iostream>

namespace mfda {

inline TrajectorySet make_training_set(const ExperimentConfig& cfg) {
  return generate_dataset(cfg.model, cfg.observation, cfg.trajectories, cfg.length,
                          cfg.initial_condition, cfg.seed);
}

inline Trajectory make_test_trajectory(const ExperimentConfig& cfg) {
  if (cfg.test_length < 1) {
    Trajectory t;
    t.states.resize(0, cfg.model.state_dim());
    t.observations.resize(0, cfg.observation.observation_dim());
    return t;
  }
  return simulate_trajectory(cfg.model, cfg.observation, cfg.test_length, cfg.test_ic(),
                             cfg.test_seed, 0);
}

/// Resolves "fnn" delay selection on the first training trajectory.
inline FnnResult resolve_delay_from_data(ExperimentConfig& cfg, const TrajectorySet& data) {
  FnnResult res;
  res.delay = cfg.pipeline.delay;
  res.achieved = true;
  if (!cfg.delay_auto) return res;
  res = estimate_delay_fnn(data.trajectories.front().observations, cfg.fnn);
  resolve_delay(cfg, res.delay);
  return res;
}

/// Gaussian prior of the test initial condition (zero covariance entries are
/// replaced by a small value so the baseline ensemble is not degenerate).
inline std::pair<Vector, Matrix> test_prior(const ExperimentConfig& cfg, const Trajectory& test) {
  const Index n = cfg.model.state_dim();
  const InitialConditionSampler& ic = cfg.test_ic();
  Vector mean = ic.mean.size() == n ? ic.mean : Vector::Zero(n);
  Vector var = ic.stddev.size() == n ? Vector(ic.stddev.array().square()) : Vector::Zero(n);
  if (ic.spinup_steps > 0 || cfg.model.kind() == ModelKind::kAllenCahn) {
    // Spun-up or deterministic ICs: centre on the truth's first state.
    mean = test.states.row(0).transpose();
    var = Vector::Constant(n, cfg.model.kind() == ModelKind::kAllenCahn ? 1e-2 : 1.0);
  }
  var = var.cwiseMax(1e-6);
  return {mean, var.asDiagonal()};
}

struct RunResult {
  SurrogateBundle bundle;
  OnlineResult online;
  Metrics metrics;
  double offline_seconds = 0.0;
  double online_seconds = 0.0;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline RunResult run_pipeline(const ExperimentConfig& cfg, const TrajectorySet& train,
                              const Trajectory& test) {
  RunResult out;
  auto t0 = std::chrono::steady_clock::now();
  out.bundle = offline(train, cfg.pipeline);
  out.offline_seconds = seconds_since(t0);
  t0 = std::chrono::steady_clock::now();
  out.online = online(out.bundle, test.observations, cfg.pipeline, cfg.test_seed);
  out.online_seconds = seconds_since(t0);
  out.metrics = compute_metrics(out.online.estimates, test.states);
  return out;
}

/// Baseline EnKF with the true model, scored on the same time indices as a
/// surrogate run with delay d (k >= d - 1).
inline Metrics baseline_metrics(const ExperimentConfig& cfg, const Trajectory& test,
                                std::vector<PosteriorStateEstimate>* estimates = nullptr) {
  const auto [mean, cov] = test_prior(cfg, test);
  auto est = oracle_enkf(cfg.model, cfg.observation, test.observations, mean, cov,
                         cfg.pipeline.ensemble_size, cfg.test_seed);
  const Index skip = std::min<Index>(cfg.pipeline.delay - 1, static_cast<Index>(est.size()));
  std::vector<PosteriorStateEstimate> scored(est.begin() + skip, est.end());
  const Metrics m = compute_metrics(scored, test.states);
  if (estimates) *estimates = std::move(est);
  return m;
}

/// Step index of a model time t: k = round(t / dt), clamped to the stream.
inline Index time_to_step(double t, double dt, Index steps) {
  const auto k = static_cast<Index>(std::llround(t / dt));
  return std::clamp<Index>(k, 0, std::max<Index>(0, steps - 1));
}

}  // namespace mfda
