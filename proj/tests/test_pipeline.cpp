#include "mfda/experiment.hpp"
#include "mfda/io.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace mfda;

namespace {

PosteriorStateEstimate estimate(Index k, Vector mean, Matrix cov) {
  PosteriorStateEstimate e;
  e.time_index = k;
  e.mean = std::move(mean);
  e.covariance = std::move(cov);
  return e;
}

InitialConditionSampler pendulum_ic() {
  InitialConditionSampler ic;
  ic.mean = Vector::Zero(2);
  ic.stddev = (Vector(2) << 0.3, 0.6).finished();
  return ic;
}

ModelSpec quiet_pendulum() {
  PendulumParams p;
  p.sqrt_dt_noise = true;
  return ModelSpec{p, 0.05};
}

PipelineConfig small_dmdt(Index d) {
  PipelineConfig cfg;
  cfg.method = SurrogateMethod::kDmdT;
  cfg.delay = d;
  cfg.ensemble_size = 30;
  cfg.refine_iterations = 1;
  RegressorSpec s = RegressorSpec::defaults_for(d);
  s.hidden = {16, 16};
  s.epochs = 5;
  cfg.regressor = s;
  return cfg;
}

}  // namespace

TEST(Metrics, HandCases) {
  std::vector<PosteriorStateEstimate> est{estimate(0, Vector::Constant(1, 1.0), Matrix::Constant(1, 1, 4.0)),
                                          estimate(1, Vector::Constant(1, -1.0), Matrix::Constant(1, 1, 4.0))};
  const Matrix truth = Matrix::Zero(2, 1);
  const Metrics m = compute_metrics(est, truth);
  EXPECT_DOUBLE_EQ(m.rmse, 1.0);
  EXPECT_DOUBLE_EQ(m.spread, 2.0);
  EXPECT_EQ(m.steps, 2);

  std::vector<PosteriorStateEstimate> exact{estimate(0, Vector::Constant(3, 2.0), Matrix::Zero(3, 3))};
  const Metrics z = compute_metrics(exact, Matrix::Constant(1, 3, 2.0));
  EXPECT_EQ(z.rmse, 0.0);
  EXPECT_EQ(z.spread, 0.0);
}

TEST(Metrics, ConstantOffset) {
  Rng rng = make_rng(1, 0, StreamRole::kMisc);
  const Matrix truth = Matrix::Random(40, 3);
  const Matrix means = truth.array() - 0.37;
  const Metrics m = compute_metrics(means, Vector::Zero(40), truth);
  EXPECT_NEAR(m.rmse, 0.37, 1e-14);
  EXPECT_THROW(compute_metrics(means.topRows(39), Vector::Zero(39), truth), ContractViolation);
}

TEST(Metrics, SpreadMatchesSampleStatistics) {
  Rng rng = make_rng(2, 0, StreamRole::kMisc);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<PosteriorStateEstimate> est;
  double trace_sum = 0.0;
  for (Index k = 0; k < 5; ++k) {
    const Matrix samples = Matrix::NullaryExpr(50, 3, [&] { return (1.0 + k) * n(rng); });
    est.push_back(summarize_samples(k, samples, false));
    const Matrix c = samples.rowwise() - samples.colwise().mean();
    trace_sum += c.squaredNorm() / 49.0;
    EXPECT_NEAR(est.back().spread, std::sqrt(c.squaredNorm() / 49.0 / 3.0), 1e-12);
  }
  const Metrics m = compute_metrics(est, Matrix::Zero(5, 3));
  EXPECT_NEAR(m.spread, std::sqrt(trace_sum / 15.0), 1e-10);
}

TEST(Kde, SingleSampleIsGaussian) {
  const double h = 0.7;
  const Matrix grid = linspace_grid(-3, 3, 61);
  const Vector dens = kde_eval(Matrix::Zero(1, 1), h, grid);
  for (Index g = 0; g < grid.rows(); ++g) {
    const double x = grid(g, 0);
    EXPECT_NEAR(dens[g], std::exp(-0.5 * x * x / (h * h)) / (h * std::sqrt(2 * std::numbers::pi)),
                1e-15);
  }
}

TEST(Kde, SymmetricAndNormalised) {
  Matrix s(2, 1);
  s << -1.0, 1.0;
  const Matrix grid = linspace_grid(-8, 8, 801);
  const Vector dens = kde_eval(s, 0.5, grid);
  for (Index g = 0; g < grid.rows(); ++g) EXPECT_NEAR(dens[g], dens[grid.rows() - 1 - g], 1e-12);
  double integral = 0.0;
  for (Index g = 1; g < grid.rows(); ++g) integral += 0.5 * (dens[g] + dens[g - 1]) * 0.02;
  EXPECT_NEAR(integral, 1.0, 0.01);
}

TEST(Kde, ConvergesToNormalDensity) {
  Rng rng = make_rng(3, 0, StreamRole::kMisc);
  std::normal_distribution<double> n(0.0, 1.0);
  const Matrix samples = Matrix::NullaryExpr(10000, 1, [&] { return n(rng); });
  const Vector h = silverman_bandwidth(samples);
  const Matrix grid = linspace_grid(-4, 4, 161);
  const Vector dens = kde_eval(samples, h, grid);
  double worst = 0.0;
  for (Index g = 0; g < grid.rows(); ++g) {
    const double x = grid(g, 0);
    worst = std::max(worst, std::abs(dens[g] - std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi)));
  }
  EXPECT_LT(worst, 0.02);
}

TEST(Kde, RejectsBadBandwidth) {
  EXPECT_THROW(kde_eval(Matrix::Zero(2, 1), 0.0, linspace_grid(0, 1, 3)), ContractViolation);
}

TEST(Pipeline, DmdtIsDeterministic) {
  const auto obs = ObservationSpec::selector(2, {1}, Matrix::Constant(1, 1, 0.1));
  const TrajectorySet data = generate_dataset(quiet_pendulum(), obs, 4, 80, pendulum_ic(), 3);
  const Trajectory test = simulate_trajectory(quiet_pendulum(), obs, 60, pendulum_ic(), 99, 0);
  const PipelineConfig cfg = small_dmdt(3);
  const SurrogateBundle a = offline(data, cfg);
  const SurrogateBundle b = offline(data, cfg);
  EXPECT_EQ(io::bundle_to_json(a).dump(), io::bundle_to_json(b).dump());
  const OnlineResult oa = online(a, test.observations, cfg, 5);
  const OnlineResult ob = online(b, test.observations, cfg, 5);
  ASSERT_EQ(oa.estimates.size(), ob.estimates.size());
  for (std::size_t i = 0; i < oa.estimates.size(); ++i)
    EXPECT_EQ(oa.estimates[i].mean, ob.estimates[i].mean);
  // Warm-up: the first estimate is at k = d - 1 (zero-based).
  EXPECT_EQ(oa.estimates.front().time_index, 2);
  EXPECT_EQ(oa.estimates.size(), 58u);
}

TEST(Pipeline, IdentityReconstructionAtUnitDelay) {
  PendulumParams p;
  p.sigma1_sq = p.sigma2_sq = 0.0;
  const ModelSpec model{p, 0.05};
  const auto obs = ObservationSpec::identity(2, Matrix::Zero(2, 2));
  const TrajectorySet data = generate_dataset(model, obs, 30, 100, pendulum_ic(), 4);
  const ReconstructionDataset ds = build_reconstruction_dataset(observation_sequences(data), data, 1);
  EXPECT_EQ(ds.inputs, ds.targets);
  RegressorSpec spec = RegressorSpec::defaults_for(2);
  const RegressorSpec f = train_regressor(ds, spec);
  const TrajectorySet held = generate_dataset(model, obs, 2, 50, pendulum_ic(), 5);
  const Matrix& x = held.trajectories[1].states;
  EXPECT_LT((predict_regressor_batch(f, x) - x).norm() / x.norm(), 1e-2);
}

TEST(Pipeline, LibrarySizes) {
  const auto obs = ObservationSpec::sum_of_components(3, 2.0);
  InitialConditionSampler ic;
  ic.mean = Vector::Zero(3);
  ic.stddev = Vector::Constant(3, 5.0);
  ic.spinup_steps = 100;
  const TrajectorySet data = generate_dataset(ModelSpec{Lorenz63Params{}, 0.01}, obs, 3, 40, ic, 2);
  const Index d = 5, mtraj = 3, t = 40;
  EXPECT_EQ(build_transition_library(data, d).size(), (t - d) * mtraj);
  PipelineConfig cfg;
  cfg.method = SurrogateMethod::kKnnT;
  cfg.delay = d;
  cfg.ensemble_size = 10;
  cfg.transition_neighbors = 8;
  cfg.reconstruction = ReconstructionKind::kLocallyConstant;
  cfg.reconstruction_neighbors = 8;
  const SurrogateBundle b = offline(data, cfg);
  EXPECT_EQ(b.transition_library->size(), (t - d) * mtraj);
  EXPECT_EQ(b.reconstruction_library->size(), (t - d + 1) * mtraj);
  cfg.transition_neighbors = (t - d) * mtraj + 1;
  EXPECT_THROW(offline(data, cfg), ContractViolation);
}

TEST(Pipeline, ExactMatchAnalogReconstruction) {
  PendulumParams p;
  p.sigma1_sq = p.sigma2_sq = 0.0;
  const ModelSpec model{p, 0.05};
  const auto obs = ObservationSpec::identity(2, Matrix::Zero(2, 2));
  const TrajectorySet data = generate_dataset(model, obs, 3, 60, pendulum_ic(), 6);
  PipelineConfig cfg;
  cfg.method = SurrogateMethod::kKnnT;
  cfg.delay = 3;
  cfg.ensemble_size = 20;
  cfg.initial_r_scale = 1e-12;
  cfg.filter.adaptive = false;
  cfg.transition_neighbors = 5;
  cfg.reconstruction = ReconstructionKind::kLocallyConstant;
  cfg.reconstruction_neighbors = 1;
  const SurrogateBundle b = offline(data, cfg);
  const Trajectory& query = data.trajectories[1];
  cfg.keep_samples = true;
  const OnlineResult on = online(b, query.observations, cfg, 8);
  ASSERT_EQ(on.estimates.size(), 58u);
  for (const auto& e : on.estimates)
    EXPECT_LT((e.mean - query.states.row(e.time_index).transpose()).cwiseAbs().maxCoeff(), 1e-12)
        << e.time_index;
}

TEST(Pipeline, LocallyLinearDiffersFromConstantOnGenericData) {
  Rng rng = make_rng(11, 0, StreamRole::kMisc);
  const Matrix keys = Matrix::NullaryExpr(100, 2, [&] { return std::normal_distribution<>()(rng); });
  const Matrix affine = (keys * (Matrix(2, 1) << 1.5, -0.5).finished()).array() + 0.25;
  const Vector q = (Vector(2) << 0.3, -0.2).finished();
  const AnalogLibrary gen = make_library(keys, affine, LibraryRole::kReconstruction);
  EXPECT_GT(std::abs(ll_apply(gen, q, 20).value[0] - lc_apply(gen, q, 20).value[0]), 1e-3);
  const AnalogLibrary flat = make_library(keys, Matrix::Constant(100, 1, 2.0), LibraryRole::kReconstruction);
  EXPECT_NEAR(ll_apply(flat, q, 20).value[0], lc_apply(flat, q, 20).value[0], 1e-12);
}

TEST(Pipeline, ConstantObservationsGiveConstantStates) {
  // A bundle with the identity operator and a trained map, fed a constant stream.
  const auto obs = ObservationSpec::selector(2, {1}, Matrix::Constant(1, 1, 0.1));
  const TrajectorySet data = generate_dataset(quiet_pendulum(), obs, 3, 60, pendulum_ic(), 7);
  PipelineConfig cfg = small_dmdt(2);
  cfg.filter.adaptive = false;
  cfg.window_update = false;
  cfg.ensemble_size = 2000;
  SurrogateBundle b = offline(data, cfg);
  b.dmd->k = Matrix::Identity(1, 1);
  b.dmd->k_y = Matrix::Identity(1, 1);
  b.noise.q = Matrix::Constant(1, 1, 1e-12);
  b.noise.r = Matrix::Constant(1, 1, 1e-12);
  const OnlineResult on = online(b, Matrix::Constant(40, 1, 0.3), cfg, 3);
  const Vector first = on.estimates.front().mean;
  for (const auto& e : on.estimates) EXPECT_LT((e.mean - first).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Pipeline, WindowUpdateConsistentOnStationaryLinearSystem) {
  PendulumParams p;
  p.sqrt_dt_noise = true;
  const ModelSpec model{p, 0.05};
  const auto obs = ObservationSpec::selector(2, {1}, Matrix::Constant(1, 1, 0.05));
  InitialConditionSampler ic = pendulum_ic();
  ic.stddev *= 0.3;  // small angles: the dynamics are close to linear
  const TrajectorySet data = generate_dataset(model, obs, 10, 200, ic, 8);
  const Trajectory test = simulate_trajectory(model, obs, 400, ic, 77, 0);
  PipelineConfig cfg = small_dmdt(4);
  cfg.ensemble_size = 60;
  cfg.regressor->epochs = 60;
  const SurrogateBundle b = offline(data, cfg);
  const OnlineResult with = online(b, test.observations, cfg, 2);
  cfg.window_update = false;
  const OnlineResult without = online(b, test.observations, cfg, 2);
  EXPECT_GT(with.window_updates, 0);
  EXPECT_EQ(without.window_updates, 0);
  const double r1 = compute_metrics(with.estimates, test.states).rmse;
  const double r0 = compute_metrics(without.estimates, test.states).rmse;
  EXPECT_LT(std::abs(r1 - r0), 0.2 * r0);
}

TEST(Pipeline, PushforwardReproducesSamples) {
  const auto obs = ObservationSpec::selector(2, {1}, Matrix::Constant(1, 1, 0.1));
  const TrajectorySet data = generate_dataset(quiet_pendulum(), obs, 3, 60, pendulum_ic(), 9);
  PipelineConfig cfg = small_dmdt(3);
  cfg.keep_samples = true;
  const SurrogateBundle b = offline(data, cfg);
  const OnlineResult on = online(b, data.trajectories[0].observations, cfg, 4);
  for (const auto& e : on.estimates) {
    ASSERT_EQ(e.delay_samples.rows(), cfg.ensemble_size);
    EXPECT_EQ(reconstruct_states(b, e.delay_samples), e.samples);
    const Matrix c = e.samples.rowwise() - e.samples.colwise().mean();
    EXPECT_LT((e.covariance - c.transpose() * c / (cfg.ensemble_size - 1.0)).norm(), 1e-10);
  }
}

TEST(Pipeline, EmptyStreamProducesNoEstimates) {
  const auto obs = ObservationSpec::selector(2, {1}, Matrix::Constant(1, 1, 0.1));
  const TrajectorySet data = generate_dataset(quiet_pendulum(), obs, 2, 40, pendulum_ic(), 10);
  const PipelineConfig cfg = small_dmdt(2);
  const SurrogateBundle b = offline(data, cfg);
  EXPECT_TRUE(online(b, Matrix(0, 1), cfg, 1).estimates.empty());
  EXPECT_THROW(online(b, Matrix::Zero(5, 2), cfg, 1), DataError);
}
