#pragma once

// Offline construction and online use of the surrogate: DMD-Takens (DMD
// transition + learned reconstruction) and KNN-Takens (analog transition +
// analog reconstruction), plus evaluation metrics and KDE plot data.

#include "mfda/common.hpp"
#include "mfda/dmd.hpp"
#include "mfda/embedding.hpp"
#include "mfda/ensemble_filter.hpp"
#include "mfda/models.hpp"
#include "mfda/reconstruction.hpp"

#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace mfda {

enum class SurrogateMethod { kDmdT, kKnnT };
enum class ReconstructionKind { kRegressor, kLocallyConstant, kLocallyLinear };

inline std::string to_string(SurrogateMethod m) {
  return m == SurrogateMethod::kDmdT ? "dmd_t" : "knn_t";
}

inline std::string to_string(ReconstructionKind k) {
  switch (k) {
    case ReconstructionKind::kRegressor: return "nn";
    case ReconstructionKind::kLocallyConstant: return "lc";
    case ReconstructionKind::kLocallyLinear: return "ll";
  }
  return "unknown";
}

inline std::string to_string(AnalogOperator op) {
  return op == AnalogOperator::kLocallyConstant ? "lc" : "ll";
}

struct PipelineConfig {
  SurrogateMethod method = SurrogateMethod::kDmdT;
  Index delay = 10;

  // Filtering of denoised observations.
  Index ensemble_size = 100;
  FilterOptions filter;
  double alpha = 0.02;
  double cov_floor = 1e-8;
  double initial_q_scale = 0.1;
  double initial_r_scale = 0.1;

  // DMD surrogate.
  DictionaryKind dictionary = DictionaryKind::kIdentity;
  int dictionary_degree = 2;
  double dmd_tolerance = 1e-10;
  int refine_iterations = 3;
  bool window_update = true;
  Index window_length = 0;   // 0: offline trajectory length
  Index window_cadence = 0;  // 0: window_length / 2

  // Analog transition (KNN-T).
  AnalogOperator transition_operator = AnalogOperator::kLocallyConstant;
  Index transition_neighbors = 100;
  double transition_lambda = 0.0;
  // Singular values of the ensemble Jacobian of the transition (DMD-T or
  // KNN-T) at or below this are ignored by the adaptive Q estimator.
  double transition_jacobian_cutoff = 0.5;

  // Reconstruction map.
  ReconstructionKind reconstruction = ReconstructionKind::kRegressor;
  Index reconstruction_neighbors = 100;
  double reconstruction_lambda = 0.0;
  std::optional<RegressorSpec> regressor;  // default architecture if empty

  std::uint64_t seed = 0;
  bool keep_samples = false;  // store delay and state samples per estimate

  RefineConfig refine_config() const {
    RefineConfig rc;
    rc.ensemble_size = ensemble_size;
    rc.iterations = refine_iterations;
    rc.filter = filter;
    rc.alpha = alpha;
    rc.cov_floor = cov_floor;
    rc.initial_q_scale = initial_q_scale;
    rc.initial_r_scale = initial_r_scale;
    rc.jacobian_cutoff = transition_jacobian_cutoff;
    rc.seed = seed;
    return rc;
  }

  Dictionary make_dictionary(Index m) const {
    switch (dictionary) {
      case DictionaryKind::kIdentity: return Dictionary::identity(m);
      case DictionaryKind::kPolynomial: return Dictionary::polynomial(m, dictionary_degree);
      case DictionaryKind::kCustom: break;
    }
    throw ConfigError("custom dictionaries cannot be configured declaratively");
  }
};

struct OfflineReport {
  std::vector<double> costs;        // J(K^(t))
  double regressor_mse = 0.0;       // training loss of F, original units
  Index reconstruction_pairs = 0;
  std::vector<std::string> warnings;
};

struct SurrogateBundle {
  SurrogateMethod method = SurrogateMethod::kDmdT;
  ReconstructionKind reconstruction = ReconstructionKind::kRegressor;
  Index delay = 1;
  Index observation_dim = 1;
  Index state_dim = 1;
  Index training_length = 0;

  // Transition surrogate: exactly one of these, matching `method`.
  std::optional<DmdOperator> dmd;
  std::vector<DmdOperator> dmd_history;  // K^(0) .. K^(t_max)
  std::optional<AnalogLibrary> transition_library;
  AnalogOperator transition_operator = AnalogOperator::kLocallyConstant;
  Index transition_neighbors = 100;

  // Reconstruction map: exactly one of these, matching `reconstruction`.
  std::optional<RegressorSpec> regressor;
  std::optional<AnalogLibrary> reconstruction_library;
  Index reconstruction_neighbors = 100;

  NoiseEstimate noise;
  std::vector<Matrix> posterior_means;  // offline, per trajectory
  OfflineReport report;

  void validate() const {
    if (delay < 1) throw ContractViolation("bundle delay must be >= 1");
    if (method == SurrogateMethod::kDmdT && (!dmd || transition_library))
      throw ContractViolation("dmd_t bundle must carry exactly a DMD operator");
    if (method == SurrogateMethod::kKnnT && (dmd || !transition_library))
      throw ContractViolation("knn_t bundle must carry exactly a transition library");
    const bool nn = reconstruction == ReconstructionKind::kRegressor;
    if (nn != regressor.has_value() || nn == reconstruction_library.has_value())
      throw ContractViolation("bundle reconstruction map inconsistent with its kind");
  }
};

struct PosteriorStateEstimate {
  Index time_index = 0;
  Vector mean;
  Matrix covariance;
  double spread = 0.0;          // sqrt(trace(P) / n)
  Matrix samples;               // N x n, when kept
  Matrix delay_samples;         // N x (d*m), when kept
};

inline PosteriorStateEstimate summarize_samples(Index k, Matrix samples, bool keep) {
  PosteriorStateEstimate est;
  est.time_index = k;
  est.mean = row_mean(samples);
  est.covariance = sample_covariance(samples);
  est.spread = std::sqrt(est.covariance.trace() / static_cast<double>(samples.cols()));
  if (keep) est.samples = std::move(samples);
  return est;
}

struct OnlineResult {
  std::vector<PosteriorStateEstimate> estimates;  // k >= d-1 only
  Matrix observation_means;    // T x m filtered denoised observations
  Vector observation_spreads;  // T
  Index window_updates = 0;
  Index degenerate_windows = 0;
  NoiseEstimate final_noise;
};

// ---------------------------------------------------------------------------
// Helpers

inline std::vector<Matrix> observation_sequences(const TrajectorySet& data) {
  std::vector<Matrix> out;
  for (const auto& t : data.trajectories) out.push_back(t.observations);
  return out;
}

/// h(x) without noise, per trajectory.
inline std::vector<Matrix> noiseless_observations(const TrajectorySet& data,
                                                  const ObservationSpec& obs) {
  std::vector<Matrix> out;
  for (const auto& t : data.trajectories) out.push_back(t.states * obs.h.transpose());
  return out;
}

/// Reference surrogate: DMD fitted on noiseless observations.
inline DmdOperator reference_operator(const TrajectorySet& data, const ObservationSpec& obs,
                                      const Dictionary& dict, double tol = 1e-10) {
  return fit(noiseless_observations(data, obs), dict, tol);
}

/// Posterior-mean delay vectors paired with states, k = d-1 .. T-1.
inline ReconstructionDataset build_reconstruction_dataset(const std::vector<Matrix>& means,
                                                          const TrajectorySet& data,
                                                          Index d) {
  Index rows = 0;
  for (const auto& m : means) rows += m.rows() - d + 1;
  require(rows > 0, "reconstruction dataset: trajectories shorter than the delay");
  ReconstructionDataset ds;
  ds.inputs.resize(rows, d * means.front().cols());
  ds.targets.resize(rows, data.state_dim());
  Index r = 0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    const Matrix emb = delay_matrix(means[i], d);
    ds.inputs.middleRows(r, emb.rows()) = emb;
    ds.targets.middleRows(r, emb.rows()) =
        data.trajectories[i].states.bottomRows(emb.rows());
    r += emb.rows();
  }
  return ds;
}

/// Raw-observation delay vectors with their successors, k = d-1 .. T-2.
inline AnalogLibrary build_transition_library(const TrajectorySet& data, Index d,
                                              double lambda = 0.0) {
  const Index per = data.length() - d;
  require(per >= 1, "transition library: trajectories too short for the delay");
  const Index m = data.observation_dim();
  Matrix keys(per * data.size(), d * m), values(per * data.size(), m);
  Index r = 0;
  for (const auto& t : data.trajectories) {
    for (Index k = d - 1; k + 1 < t.length(); ++k, ++r) {
      keys.row(r) = delay_vector_at(t.observations, k, d).transpose();
      values.row(r) = t.observations.row(k + 1);
    }
  }
  return make_library(std::move(keys), std::move(values), LibraryRole::kTransition, d, lambda);
}

/// Analog transition: maps each particle's delay window to its successor.
/// The history must hold the analyses that `members` came from.
inline Transition analog_transition(const AnalogLibrary& lib, const DelayHistory& history,
                                    AnalogOperator op, Index neighbors) {
  return [&lib, &history, op, neighbors](const Matrix& members) -> Matrix {
    const Matrix queries = history.ready() ? history.samples().samples : history.padded_samples();
    require(queries.rows() == members.rows(), "analog transition: ensemble size changed");
    return analog_apply_batch(op, lib, queries, neighbors);
  };
}

inline Index effective_window(const PipelineConfig& cfg, Index training_length) {
  return cfg.window_length > 0 ? cfg.window_length : training_length;
}

inline Index effective_cadence(const PipelineConfig& cfg, Index window) {
  return cfg.window_cadence > 0 ? cfg.window_cadence : std::max<Index>(1, window / 2);
}

namespace detail {

inline void attach_reconstruction(SurrogateBundle& bundle, const PipelineConfig& cfg,
                                  const TrajectorySet& data) {
  const ReconstructionDataset ds =
      build_reconstruction_dataset(bundle.posterior_means, data, cfg.delay);
  bundle.report.reconstruction_pairs = ds.size();
  bundle.reconstruction = cfg.reconstruction;
  bundle.reconstruction_neighbors = cfg.reconstruction_neighbors;
  if (cfg.reconstruction == ReconstructionKind::kRegressor) {
    RegressorSpec spec = cfg.regressor ? *cfg.regressor
                                       : RegressorSpec::defaults_for(ds.inputs.cols());
    if (!cfg.regressor) spec.seed = cfg.seed;
    bundle.regressor = train_regressor(ds, spec);
    bundle.report.regressor_mse = bundle.regressor->final_mse;
  } else {
    if (ds.size() < cfg.reconstruction_neighbors)
      throw ContractViolation("reconstruction library smaller than the neighbour count");
    bundle.reconstruction_library =
        make_library(ds.inputs, ds.targets, LibraryRole::kReconstruction, cfg.delay,
                     cfg.reconstruction_lambda);
  }
}

inline Matrix reconstruct(const SurrogateBundle& bundle, const Matrix& delay_samples) {
  switch (bundle.reconstruction) {
    case ReconstructionKind::kRegressor:
      return predict_regressor_batch(*bundle.regressor, delay_samples);
    case ReconstructionKind::kLocallyConstant:
      return analog_apply_batch(AnalogOperator::kLocallyConstant, *bundle.reconstruction_library,
                                delay_samples, bundle.reconstruction_neighbors);
    case ReconstructionKind::kLocallyLinear:
      return analog_apply_batch(AnalogOperator::kLocallyLinear, *bundle.reconstruction_library,
                                delay_samples, bundle.reconstruction_neighbors);
  }
  return {};
}

inline void check_offline_input(const TrajectorySet& data, const PipelineConfig& cfg) {
  if (data.size() < 1) throw ContractViolation("offline stage needs at least one trajectory");
  if (cfg.delay < 1) throw ConfigError("delay length must be >= 1");
  if (data.length() <= cfg.delay)
    throw ContractViolation("trajectory length must exceed the delay length");
  if (cfg.ensemble_size < 2) throw ConfigError("ensemble size must be >= 2");
}

}  // namespace detail

/// Map a bundle's delay samples to state samples; the pushforward used by the
/// online stage.
inline Matrix reconstruct_states(const SurrogateBundle& bundle, const Matrix& delay_samples) {
  return detail::reconstruct(bundle, delay_samples);
}

// ---------------------------------------------------------------------------
// Offline stages

inline SurrogateBundle offline_dmdt(const TrajectorySet& data, const PipelineConfig& cfg) {
  detail::check_offline_input(data, cfg);
  SurrogateBundle bundle;
  bundle.method = SurrogateMethod::kDmdT;
  bundle.delay = cfg.delay;
  bundle.observation_dim = data.observation_dim();
  bundle.state_dim = data.state_dim();
  bundle.training_length = data.length();

  const std::vector<Matrix> raw = observation_sequences(data);
  const Dictionary dict = cfg.make_dictionary(data.observation_dim());
  DmdOperator k0 = fit(raw, dict, cfg.dmd_tolerance);
  RefineResult refined;
  try {
    refined = refine(k0, raw, cfg.refine_config());
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("offline refine: ") + e.what());
  }
  bundle.dmd_history = refined.operators;
  bundle.dmd = refined.operators.back();
  bundle.report.costs = refined.costs;
  for (const auto& op : refined.operators)
    for (const auto& w : op.warnings) bundle.report.warnings.push_back(w);
  bundle.noise = refined.noise;
  bundle.posterior_means = std::move(refined.posterior_means);
  detail::attach_reconstruction(bundle, cfg, data);
  return bundle;
}

/// Filters one trajectory with an analog transition.
inline FilterTrail filter_with_analog(const Matrix& y, const AnalogLibrary& lib,
                                      AnalogOperator op, Index neighbors, Index d,
                                      const NoiseEstimate& noise0, Index ensemble_size,
                                      const FilterOptions& opts, double jacobian_cutoff,
                                      Rng& rng, const AnalysisObserver& observer = {}) {
  const Index m = y.cols();
  DelayHistory history(d);
  const Ensemble init = sample_ensemble(y.row(0).transpose(), noise0.r, ensemble_size, rng, -1);
  history.push(init);
  const Transition transition = analog_transition(lib, history, op, neighbors);
  NoiseEstimate noise = noise0;
  noise.jacobian_cutoff = jacobian_cutoff;
  return filter_sequence(y, transition, Matrix::Identity(m, m), init, noise, opts, rng,
                         [&](Index k, const Ensemble& e) {
                           history.push(e);
                           if (observer) observer(k, e);
                         });
}

inline SurrogateBundle offline_knnt(const TrajectorySet& data, const PipelineConfig& cfg) {
  detail::check_offline_input(data, cfg);
  SurrogateBundle bundle;
  bundle.method = SurrogateMethod::kKnnT;
  bundle.delay = cfg.delay;
  bundle.observation_dim = data.observation_dim();
  bundle.state_dim = data.state_dim();
  bundle.training_length = data.length();
  bundle.transition_operator = cfg.transition_operator;
  bundle.transition_neighbors = cfg.transition_neighbors;

  bundle.transition_library = build_transition_library(data, cfg.delay, cfg.transition_lambda);
  if (bundle.transition_library->size() < cfg.transition_neighbors)
    throw ContractViolation("transition library (" +
                            std::to_string(bundle.transition_library->size()) +
                            " entries) smaller than the neighbour count");

  const std::vector<Matrix> raw = observation_sequences(data);
  const RefineConfig rc = cfg.refine_config();
  const NoiseEstimate noise0 = initial_noise_estimate(raw, rc);
  std::vector<FilterTrail> trails(raw.size());
  parallel_for(static_cast<Index>(raw.size()), [&](Index i) {
    Rng rng = make_rng(cfg.seed, static_cast<std::uint64_t>(i), StreamRole::kFilter);
    trails[static_cast<std::size_t>(i)] = filter_with_analog(
        raw[static_cast<std::size_t>(i)], *bundle.transition_library, cfg.transition_operator,
        cfg.transition_neighbors, cfg.delay, noise0, cfg.ensemble_size, cfg.filter,
        cfg.transition_jacobian_cutoff, rng);
  });
  std::vector<NoiseEstimate> finals;
  for (auto& tr : trails) {
    bundle.posterior_means.push_back(tr.means);
    finals.push_back(tr.final_noise);
  }
  bundle.noise = average_noise(finals);
  detail::attach_reconstruction(bundle, cfg, data);
  return bundle;
}

inline SurrogateBundle offline(const TrajectorySet& data, const PipelineConfig& cfg) {
  return cfg.method == SurrogateMethod::kDmdT ? offline_dmdt(data, cfg)
                                              : offline_knnt(data, cfg);
}

// ---------------------------------------------------------------------------
// Online stages

namespace detail {

inline void emit_estimate(const SurrogateBundle& bundle, const DelayHistory& history,
                          Index k, bool keep, OnlineResult& out) {
  if (!history.ready()) return;
  DelayEnsemble delay = history.samples();
  Matrix states = reconstruct(bundle, delay.samples);
  PosteriorStateEstimate est = summarize_samples(k, std::move(states), keep);
  if (keep) est.delay_samples = std::move(delay.samples);
  out.estimates.push_back(std::move(est));
}

inline void check_stream(const SurrogateBundle& bundle, const Matrix& y_stream) {
  bundle.validate();
  if (y_stream.rows() > 0 && y_stream.cols() != bundle.observation_dim)
    throw DataError("observation stream dimension " + std::to_string(y_stream.cols()) +
                    " does not match bundle observation dimension " +
                    std::to_string(bundle.observation_dim));
}

}  // namespace detail

inline OnlineResult online_dmdt(const SurrogateBundle& bundle, const Matrix& y_stream,
                                const PipelineConfig& cfg, std::uint64_t seed) {
  detail::check_stream(bundle, y_stream);
  if (bundle.method != SurrogateMethod::kDmdT)
    throw ContractViolation("online_dmdt requires a dmd_t bundle");
  OnlineResult out;
  const Index steps = y_stream.rows();
  const Index m = bundle.observation_dim;
  out.observation_means.resize(steps, m);
  out.observation_spreads.resize(steps);
  NoiseEstimate noise = bundle.noise;
  noise.reset_history();
  noise.jacobian_cutoff = cfg.transition_jacobian_cutoff;
  out.final_noise = noise;
  if (steps == 0) return out;

  Rng rng = make_rng(seed, 0, StreamRole::kFilter);
  const Matrix h = Matrix::Identity(m, m);
  DmdOperator current = *bundle.dmd;
  Transition transition = dmd_transition(current);
  const Index window = effective_window(cfg, bundle.training_length);
  const Index cadence = effective_cadence(cfg, window);
  DelayHistory history(bundle.delay);
  Ensemble ens = sample_ensemble(y_stream.row(0).transpose(), noise.r, cfg.ensemble_size, rng, -1);

  for (Index k = 0; k < steps; ++k) {
    ens = filter_step(ens, transition, y_stream.row(k).transpose(), h, noise, cfg.filter, rng);
    ens.time_index = k;
    history.push(ens);
    out.observation_means.row(k) = ens.mean().transpose();
    out.observation_spreads[k] = ens.spread();
    detail::emit_estimate(bundle, history, k, cfg.keep_samples, out);
    if (cfg.window_update && k + 1 >= window && (k + 1) % cadence == 0) {
      const WindowUpdate upd =
          window_update(current, out.observation_means.middleRows(k + 1 - window, window));
      if (upd.degenerate) {
        ++out.degenerate_windows;
      } else {
        current = upd.op;
        transition = dmd_transition(current);
        ++out.window_updates;
      }
    }
  }
  out.final_noise = noise;
  return out;
}

inline OnlineResult online_knnt(const SurrogateBundle& bundle, const Matrix& y_stream,
                                const PipelineConfig& cfg, std::uint64_t seed) {
  detail::check_stream(bundle, y_stream);
  if (bundle.method != SurrogateMethod::kKnnT)
    throw ContractViolation("online_knnt requires a knn_t bundle");
  OnlineResult out;
  const Index steps = y_stream.rows();
  out.observation_means.resize(steps, bundle.observation_dim);
  out.observation_spreads.resize(steps);
  NoiseEstimate noise = bundle.noise;
  noise.reset_history();
  out.final_noise = noise;
  if (steps == 0) return out;

  Rng rng = make_rng(seed, 0, StreamRole::kFilter);
  DelayHistory history(bundle.delay);
  FilterTrail trail = filter_with_analog(
      y_stream, *bundle.transition_library, bundle.transition_operator,
      bundle.transition_neighbors, bundle.delay, noise, cfg.ensemble_size, cfg.filter,
      cfg.transition_jacobian_cutoff, rng,
      [&](Index k, const Ensemble& e) {
        history.push(e);
        detail::emit_estimate(bundle, history, k, cfg.keep_samples, out);
      });
  out.observation_means = trail.means;
  out.observation_spreads = trail.spreads;
  out.final_noise = trail.final_noise;
  return out;
}

inline OnlineResult online(const SurrogateBundle& bundle, const Matrix& y_stream,
                           const PipelineConfig& cfg, std::uint64_t seed) {
  return bundle.method == SurrogateMethod::kDmdT ? online_dmdt(bundle, y_stream, cfg, seed)
                                                 : online_knnt(bundle, y_stream, cfg, seed);
}

// ---------------------------------------------------------------------------
// Oracle EnKF with the true model (comparison baseline).

inline std::vector<PosteriorStateEstimate> oracle_enkf(const ModelSpec& model,
                                                       const ObservationSpec& obs,
                                                       const Matrix& y_stream,
                                                       const Vector& prior_mean,
                                                       const Matrix& prior_cov,
                                                       Index ensemble_size,
                                                       std::uint64_t seed) {
  Rng rng = make_rng(seed, 1, StreamRole::kFilter);
  Rng model_rng = make_rng(seed, 2, StreamRole::kFilter);
  const Transition transition = [&model](const Matrix& x) -> Matrix {
    Matrix out(x.rows(), x.cols());
    const Vector zero = Vector::Zero(model.noise_dim());
    for (Index j = 0; j < x.rows(); ++j)
      out.row(j) = model.step(x.row(j).transpose(), zero).transpose();
    return out;
  };
  NoiseEstimate noise = NoiseEstimate::initial(model.process_covariance(), obs.noise_cov);
  noise.floor = 0.0;
  noise.q = model.process_covariance();
  FilterOptions opts;
  opts.adaptive = false;
  std::vector<PosteriorStateEstimate> out;
  Ensemble ens = sample_ensemble(prior_mean, prior_cov, ensemble_size, model_rng, -1);
  for (Index k = 0; k < y_stream.rows(); ++k) {
    ens = filter_step(ens, transition, y_stream.row(k).transpose(), obs.h, noise, opts, rng);
    ens.time_index = k;
    out.push_back(summarize_samples(k, ens.members, false));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  double rmse = 0.0;
  double spread = 0.0;
  Index steps = 0;
};

/// RMSE = sqrt(sum ||x_k - m_k||^2 / (n T)), Spread = sqrt(sum tr(P_k) / (n T)).
inline Metrics compute_metrics(const Matrix& means, const Vector& cov_traces,
                               const Matrix& truth) {
  require(means.rows() == truth.rows() && means.cols() == truth.cols(),
          "compute_metrics: estimate and truth shapes differ");
  require(cov_traces.size() == means.rows(), "compute_metrics: trace count mismatch");
  Metrics m;
  m.steps = means.rows();
  if (m.steps == 0) return m;
  const double denom = static_cast<double>(means.cols() * means.rows());
  m.rmse = std::sqrt((means - truth).squaredNorm() / denom);
  m.spread = std::sqrt(cov_traces.sum() / denom);
  return m;
}

/// Metrics over emitted estimates; `truth` rows are indexed by time index.
inline Metrics compute_metrics(const std::vector<PosteriorStateEstimate>& estimates,
                               const Matrix& truth) {
  if (estimates.empty()) return {};
  const Index n = estimates.front().mean.size();
  Matrix means(static_cast<Index>(estimates.size()), n), aligned(means.rows(), n);
  Vector traces(means.rows());
  for (Index i = 0; i < means.rows(); ++i) {
    const auto& e = estimates[static_cast<std::size_t>(i)];
    require(e.time_index >= 0 && e.time_index < truth.rows(),
            "compute_metrics: estimate time index outside the truth sequence");
    means.row(i) = e.mean.transpose();
    aligned.row(i) = truth.row(e.time_index);
    traces[i] = e.covariance.trace();
  }
  return compute_metrics(means, traces, aligned);
}

/// Relative error ||x_c - m_c|| / ||x_c|| of one state component.
inline double component_relative_error(const std::vector<PosteriorStateEstimate>& estimates,
                                       const Matrix& truth, Index component) {
  double num = 0.0, den = 0.0;
  for (const auto& e : estimates) {
    const double t = truth(e.time_index, component);
    num += (t - e.mean[component]) * (t - e.mean[component]);
    den += t * t;
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

// ---------------------------------------------------------------------------
// Kernel density estimation (plot data)

/// Silverman's rule of thumb per marginal: 1.06 sigma P^(-1/5).
inline Vector silverman_bandwidth(const Matrix& samples) {
  const double p = static_cast<double>(samples.rows());
  const Matrix centered = samples.rowwise() - samples.colwise().mean();
  const Vector sd = (centered.colwise().squaredNorm() / std::max(1.0, p - 1.0))
                        .transpose()
                        .cwiseSqrt();
  return (1.06 * std::pow(p, -0.2) * sd).cwiseMax(1e-12);
}

/// Gaussian product-kernel density of the samples (P x dim, dim 1 or 2) at
/// each grid row (G x dim).
inline Vector kde_eval(const Matrix& samples, const Vector& bandwidth, const Matrix& grid) {
  require(samples.rows() >= 1, "kde_eval: no samples");
  require(samples.cols() == grid.cols() && samples.cols() == bandwidth.size(),
          "kde_eval: dimension mismatch");
  for (Index i = 0; i < bandwidth.size(); ++i)
    require(bandwidth[i] > 0.0, "kde_eval: bandwidth must be positive");
  const Index dim = samples.cols();
  double norm = static_cast<double>(samples.rows());
  for (Index i = 0; i < dim; ++i) norm *= bandwidth[i] * std::sqrt(2.0 * std::numbers::pi);
  Vector out(grid.rows());
  for (Index g = 0; g < grid.rows(); ++g) {
    double acc = 0.0;
    for (Index s = 0; s < samples.rows(); ++s) {
      double e = 0.0;
      for (Index i = 0; i < dim; ++i) {
        const double z = (grid(g, i) - samples(s, i)) / bandwidth[i];
        e += z * z;
      }
      acc += std::exp(-0.5 * e);
    }
    out[g] = acc / norm;
  }
  return out;
}

inline Vector kde_eval(const Matrix& samples, double bandwidth, const Matrix& grid) {
  return kde_eval(samples, Vector::Constant(samples.cols(), bandwidth), grid);
}

/// Uniform grid on [lo, hi] with `points` nodes as a column.
inline Matrix linspace_grid(double lo, double hi, Index points) {
  Matrix g(points, 1);
  for (Index i = 0; i < points; ++i)
    g(i, 0) = points == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / (points - 1);
  return g;
}

}  // namespace mfda
