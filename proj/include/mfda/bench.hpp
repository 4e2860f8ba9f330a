#pragma once

// Benchmark suites: desk-scale reproductions of the reference experiments and
// randomized invariant checks. Each criterion yields one pass/fail record with
// the measured values and the expected band. Experimental criteria use the
// median over five seeds.

#include "mfda/common.hpp"
#include "mfda/config.hpp"
#include "mfda/dmd.hpp"
#include "mfda/embedding.hpp"
#include "mfda/ensemble_filter.hpp"
#include "mfda/experiment.hpp"
#include "mfda/linalg.hpp"
#include "mfda/models.hpp"
#include "mfda/pipeline.hpp"
#include "mfda/reconstruction.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace mfda::bench {

using json = nlohmann::json;

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string measured;
  std::string expected;
  double seconds = 0.0;
  double budget_seconds = 0.0;
  json details;

  std::string line() const {
    char head[64];
    std::snprintf(head, sizeof head, "[%s] criterion %d", pass ? "PASS" : "FAIL", id);
    std::ostringstream os;
    os << head << " " << name << ": " << measured << " | expected " << expected << " | "
       << std::fixed;
    os.precision(1);
    os << seconds << " s (budget " << budget_seconds << " s)";
    return os.str();
  }
};

struct SuiteReport {
  std::string suite;
  std::vector<CriterionResult> criteria;

  bool pass() const {
    return std::all_of(criteria.begin(), criteria.end(), [](const auto& c) { return c.pass; });
  }

  json to_json() const {
    json arr = json::array();
    for (const auto& c : criteria)
      arr.push_back({{"id", c.id},
                     {"name", c.name},
                     {"pass", c.pass},
                     {"measured", c.measured},
                     {"expected", c.expected},
                     {"seconds", c.seconds},
                     {"budget_seconds", c.budget_seconds},
                     {"details", c.details}});
    return json{{"suite", suite}, {"pass", pass()}, {"criteria", arr}};
  }
};

struct BenchOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  // The analog-transition runs are the slowest; fewer seeds keep them in budget.
  std::vector<std::uint64_t> lorenz_seeds{1, 2, 3};
  int invariant_trials = 1000;
  bool verbose = true;  // progress to stderr
};

inline double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::string fmt(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline bool within(double value, double reference, double rel) {
  return std::abs(value - reference) <= rel * std::abs(reference);
}

namespace detail {

inline void log(const BenchOptions& opt, const std::string& msg) {
  if (opt.verbose) std::cerr << "[bench] " << msg << std::endl;
}

inline std::chrono::steady_clock::time_point tic() { return std::chrono::steady_clock::now(); }

inline CriterionResult finish(CriterionResult r, std::chrono::steady_clock::time_point t0) {
  r.seconds = seconds_since(t0);
  if (r.seconds > r.budget_seconds) {
    r.pass = false;
    r.measured += " (runtime over budget)";
  }
  return r;
}

}  // namespace detail

// ===========================================================================
// Presets (desk-scale reproductions)

inline ExperimentConfig preset_pendulum() {
  ExperimentConfig c;
  c.name = "pendulum";
  PendulumParams p;
  p.sqrt_dt_noise = true;
  c.model = ModelSpec{p, 0.05};
  c.observation = ObservationSpec::selector(2, {1}, Matrix::Constant(1, 1, 0.1));
  c.initial_condition.mean = Vector::Zero(2);
  c.initial_condition.stddev = (Vector(2) << 0.3, 0.6).finished();
  c.trajectories = 40;
  c.length = 800;
  c.test_length = 1000;
  c.pipeline.delay = 10;
  c.pipeline.method = SurrogateMethod::kDmdT;
  c.pipeline.reconstruction = ReconstructionKind::kRegressor;
  RegressorSpec s = RegressorSpec::defaults_for(10);
  s.epochs = 60;
  c.pipeline.regressor = s;
  c.kde_times = {12.0, 30.0, 48.0};
  return with_seed(c, 1);
}

inline ExperimentConfig preset_triad(double r = 0.1) {
  ExperimentConfig c;
  c.name = "triad";
  c.model = ModelSpec{TriadParams{}, 0.1};
  Matrix h(2, 3);
  h << 1, 1, 0, 0, 0, 2;
  c.observation = ObservationSpec::linear(h, r * Matrix::Identity(2, 2));
  c.initial_condition.mean = Vector::Zero(3);
  c.initial_condition.stddev = Vector::Constant(3, 0.5);
  c.trajectories = 20;
  c.length = 500;
  c.test_length = 1500;
  c.pipeline.delay = 10;
  RegressorSpec s = RegressorSpec::defaults_for(20);
  s.epochs = 100;
  c.pipeline.regressor = s;
  c.kde_times = {15.0, 90.0, 130.0};
  return with_seed(c, 1);
}

inline ExperimentConfig preset_lorenz63(int observation = 1) {
  ExperimentConfig c;
  c.name = "lorenz63";
  c.model = ModelSpec{Lorenz63Params{}, 0.01};
  if (observation == 1) {
    c.observation = ObservationSpec::sum_of_components(3, 2.0);
    c.pipeline.delay = 20;
  } else {
    Matrix h(2, 3);
    h << 1, 1, 1, 0, 0, 1;
    c.observation = ObservationSpec::linear(h, 2.0 * Matrix::Identity(2, 2));
    c.pipeline.delay = 10;
  }
  c.initial_condition.mean = Vector::Zero(3);
  c.initial_condition.stddev = Vector::Constant(3, 5.0);
  c.initial_condition.spinup_steps = 500;
  c.trajectories = 30;
  c.length = 200;
  c.test_length = 700;
  c.pipeline.method = SurrogateMethod::kKnnT;
  c.pipeline.transition_operator = AnalogOperator::kLocallyConstant;
  c.pipeline.transition_neighbors = 100;
  c.pipeline.reconstruction = ReconstructionKind::kLocallyConstant;
  c.pipeline.reconstruction_neighbors = 100;
  c.pipeline.regressor.reset();
  c.kde_times = {1.4, 4.0, 5.5};
  return with_seed(c, 1);
}

inline ExperimentConfig preset_allen_cahn() {
  ExperimentConfig c;
  c.name = "allen_cahn";
  c.model = ModelSpec{AllenCahnParams{}, 1.0 / 500.0};
  std::vector<Index> idx(20);
  std::iota(idx.begin(), idx.end(), Index{0});
  c.observation = ObservationSpec::selector(100, idx, 0.1 * Matrix::Identity(20, 20));
  c.initial_condition.perturbation = 0.01;
  c.initial_condition.perturbation_modes = 3;
  c.test_initial_condition = InitialConditionSampler{};
  c.trajectories = 10;
  c.length = 501;
  c.test_length = 501;
  c.pipeline.delay = 3;
  RegressorSpec s = RegressorSpec::defaults_for(60);
  s.hidden = {64, 64};
  s.epochs = 20;
  c.pipeline.regressor = s;
  c.pipeline.reconstruction_neighbors = 100;
  c.kde_times = {0.2, 0.5, 0.8};
  return with_seed(c, 1);
}

inline ExperimentConfig preset(const std::string& name) {
  if (name == "pendulum") return preset_pendulum();
  if (name == "triad") return preset_triad();
  if (name == "lorenz63") return preset_lorenz63();
  if (name == "allen_cahn") return preset_allen_cahn();
  throw ConfigError("no preset named '" + name + "'");
}

// ===========================================================================
// Property criteria

/// Criterion 1: EnKF with a large ensemble reproduces the exact Kalman filter.
inline CriterionResult kalman_oracle(const BenchOptions& opt) {
  const auto t0 = detail::tic();
  CriterionResult r{1, "Kalman oracle equivalence"};
  r.budget_seconds = 30.0;
  r.expected = "mean |m_EnKF - m_KF| / sd_KF < 0.05 (N=5000, 500 steps)";
  Matrix a(2, 2);
  a << 0.9, 0.2, -0.2, 0.9;
  const Matrix q = 0.1 * Matrix::Identity(2, 2);
  Matrix h(1, 2);
  h << 1.0, 0.0;
  const Matrix rr = Matrix::Constant(1, 1, 0.5);
  const Vector m0 = Vector::Zero(2);
  const Matrix p0 = Matrix::Identity(2, 2);
  std::vector<double> devs;
  for (auto seed : opt.seeds) {
    Rng data_rng = make_rng(seed, 0, StreamRole::kMisc);
    const Index steps = 500;
    Matrix y(steps, 1);
    Vector x = m0 + psd_sqrt(p0) * standard_normal(2, data_rng);
    for (Index k = 0; k < steps; ++k) {
      x = a * x + psd_sqrt(q) * standard_normal(2, data_rng);
      y.row(k) = (h * x + psd_sqrt(rr) * standard_normal(1, data_rng)).transpose();
    }
    const KalmanTrail kf = kalman_filter(y, a, q, h, rr, m0, p0);
    Rng rng = make_rng(seed, 1, StreamRole::kFilter);
    NoiseEstimate noise = NoiseEstimate::initial(q, rr);
    FilterOptions fo;
    fo.adaptive = false;
    const Ensemble init = sample_ensemble(m0, p0, 5000, rng, -1);
    const FilterTrail tr = filter_sequence(y, linear_transition(a), h, init, noise, fo, rng);
    double acc = 0.0;
    for (Index k = 0; k < steps; ++k)
      for (Index i = 0; i < 2; ++i)
        acc += std::abs(tr.means(k, i) - kf.means(k, i)) /
               std::sqrt(kf.covariances[static_cast<std::size_t>(k)](i, i));
    devs.push_back(acc / (2.0 * steps));
  }
  const double med = median(devs);
  r.pass = med < 0.05;
  r.measured = "median normalized deviation " + fmt(med);
  r.details = {{"per_seed", devs}};
  return detail::finish(r, t0);
}

/// Criterion 2: exact recovery of a linear map from noiseless snapshots.
inline CriterionResult dmd_recovery(const BenchOptions& opt) {
  const auto t0 = detail::tic();
  CriterionResult r{2, "exact DMD recovery"};
  r.budget_seconds = 1.0;
  r.expected = "||K - A||_F < 1e-8";
  std::vector<double> errs;
  for (auto seed : opt.seeds) {
    Rng rng = make_rng(seed, 0, StreamRole::kMisc);
    const Index m = 4;
    Matrix a = Matrix::NullaryExpr(m, m, [&]() { return standard_normal(1, rng)[0]; });
    Eigen::JacobiSVD<Matrix> svd(a);
    a *= 0.95 / svd.singularValues()[0];
    std::vector<Matrix> seqs;
    for (int t = 0; t < 3; ++t) {
      Matrix s(50, m);
      s.row(0) = standard_normal(m, rng).transpose();
      for (Index k = 1; k < 50; ++k) s.row(k) = (a * s.row(k - 1).transpose()).transpose();
      seqs.push_back(s);
    }
    const DmdOperator op = fit(seqs, Dictionary::identity(m));
    errs.push_back((op.k - a).norm());
  }
  const double worst = *std::max_element(errs.begin(), errs.end());
  r.pass = worst < 1e-8;
  r.measured = "max over seeds " + fmt(worst);
  r.details = {{"per_seed", errs}};
  return detail::finish(r, t0);
}

// ---------------------------------------------------------------------------
// Criterion 10: randomized invariants

struct InvariantOutcome {
  std::string name;
  int trials = 0;
  int failures = 0;
  std::string first_failure;
};

namespace detail {

inline Matrix random_spd(Index n, Rng& rng, double ridge = 0.1) {
  Matrix g(n, n);
  for (Index i = 0; i < n; ++i) g.row(i) = standard_normal(n, rng).transpose();
  return g * g.transpose() + ridge * Matrix::Identity(n, n);
}

inline Index uniform_index(Rng& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

template <class Check>
InvariantOutcome run_invariant(const std::string& name, int trials, std::uint64_t seed,
                               Check check) {
  InvariantOutcome out{name, trials, 0, ""};
  for (int t = 0; t < trials; ++t) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(t), StreamRole::kMisc);
    std::string why;
    bool ok = false;
    try {
      ok = check(rng, why);
    } catch (const std::exception& e) {
      why = e.what();
    }
    if (!ok) {
      if (out.failures == 0) out.first_failure = "trial " + std::to_string(t) + ": " + why;
      ++out.failures;
    }
  }
  return out;
}

}  // namespace detail

inline std::vector<InvariantOutcome> invariant_suites(int trials, std::uint64_t seed = 7) {
  using detail::random_spd;
  using detail::uniform;
  using detail::uniform_index;
  std::vector<InvariantOutcome> out;

  out.push_back(detail::run_invariant("gain normal equations", trials, seed, [](Rng& rng, std::string& why) {
    const Index p = uniform_index(rng, 1, 6), m = uniform_index(rng, 1, 4);
    const Matrix sigma = random_spd(p, rng);
    Matrix h(m, p);
    for (Index i = 0; i < m; ++i) h.row(i) = standard_normal(p, rng).transpose();
    const Matrix r = random_spd(m, rng);
    const GainResult g = kalman_gain(sigma, h, r, 0.0);
    const Matrix s = h * sigma * h.transpose() + r;
    const double res = (g.gain * s - sigma * h.transpose()).norm() /
                       std::max(1.0, (sigma * h.transpose()).norm());
    why = "relative residual " + fmt(res);
    return res < 1e-9;
  }));

  out.push_back(detail::run_invariant("kernel weight normalization", trials, seed + 1, [](Rng& rng, std::string& why) {
    const Index k = uniform_index(rng, 1, 30);
    std::vector<Neighbor> nb;
    double d = 0.0;
    for (Index i = 0; i < k; ++i) {
      d += uniform(rng, 0.0, 2.0);
      nb.push_back({i, d});
    }
    const double lambda = std::exp(uniform(rng, -5.0, 8.0));
    const KernelWeights w = kernel_weights(nb, lambda);
    const double sum = w.weights.sum();
    bool monotone = true;
    for (Index i = 1; i < k; ++i) monotone &= w.weights[i] <= w.weights[i - 1] + 1e-15;
    why = "sum " + fmt(sum, 17);
    return std::abs(sum - 1.0) < 1e-12 && (w.weights.array() >= 0).all() && monotone;
  }));

  out.push_back(detail::run_invariant("locally constant convex hull", trials, seed + 2, [](Rng& rng, std::string& why) {
    const Index lsize = uniform_index(rng, 5, 60), dim = uniform_index(rng, 1, 5), vdim = uniform_index(rng, 1, 4);
    Matrix keys(lsize, dim), values(lsize, vdim);
    for (Index i = 0; i < lsize; ++i) {
      keys.row(i) = standard_normal(dim, rng).transpose();
      values.row(i) = standard_normal(vdim, rng).transpose();
    }
    const AnalogLibrary lib = make_library(keys, values, LibraryRole::kTransition);
    const Index count = uniform_index(rng, 1, lsize);
    const Vector q = standard_normal(dim, rng);
    const AnalogResult res = lc_apply(lib, q, count);
    const auto nb = knn_query(lib, q, count);
    for (Index c = 0; c < vdim; ++c) {
      double lo = 1e300, hi = -1e300;
      for (const auto& n : nb) {
        lo = std::min(lo, values(n.index, c));
        hi = std::max(hi, values(n.index, c));
      }
      if (res.value[c] < lo - 1e-12 || res.value[c] > hi + 1e-12) {
        why = "component " + std::to_string(c) + " outside neighbour range";
        return false;
      }
    }
    return true;
  }));

  out.push_back(detail::run_invariant("locally linear affine recovery", trials, seed + 3, [](Rng& rng, std::string& why) {
    const Index dim = uniform_index(rng, 1, 4), vdim = uniform_index(rng, 1, 3);
    const Index lsize = uniform_index(rng, 4 * (dim + 1), 80);
    Matrix a(vdim, dim);
    for (Index i = 0; i < vdim; ++i) a.row(i) = standard_normal(dim, rng).transpose();
    const Vector b = standard_normal(vdim, rng);
    Matrix keys(lsize, dim), values(lsize, vdim);
    for (Index i = 0; i < lsize; ++i) {
      keys.row(i) = standard_normal(dim, rng).transpose();
      values.row(i) = (a * keys.row(i).transpose() + b).transpose();
    }
    const AnalogLibrary lib = make_library(keys, values, LibraryRole::kReconstruction);
    const Vector q = 0.5 * standard_normal(dim, rng);
    const AnalogResult res = ll_apply(lib, q, lsize);
    const Vector expect = a * q + b;
    const double err = (res.value - expect).norm() / std::max(1.0, expect.norm());
    why = "relative error " + fmt(err) + (res.fallback ? " (fell back)" : "");
    return err < 1e-6 && !res.fallback;
  }));

  out.push_back(detail::run_invariant("knn query vs exhaustive scan", trials, seed + 4, [](Rng& rng, std::string& why) {
    const Index lsize = uniform_index(rng, 1, 80), dim = uniform_index(rng, 1, 6);
    Matrix keys(lsize, dim);
    for (Index i = 0; i < lsize; ++i) {
      // Duplicate keys exercise the index tie-break.
      if (i > 0 && uniform(rng, 0, 1) < 0.15) keys.row(i) = keys.row(uniform_index(rng, 0, i - 1));
      else keys.row(i) = standard_normal(dim, rng).transpose();
    }
    const AnalogLibrary lib = make_library(keys, Matrix::Zero(lsize, 1), LibraryRole::kTransition);
    const Vector q = standard_normal(dim, rng);
    const Index count = uniform_index(rng, 1, lsize);
    const auto nb = knn_query(lib, q, count);
    std::vector<std::pair<double, Index>> scan;
    for (Index i = 0; i < lsize; ++i) scan.emplace_back((keys.row(i) - q.transpose()).squaredNorm(), i);
    std::sort(scan.begin(), scan.end());
    for (Index i = 0; i < count; ++i)
      if (nb[static_cast<std::size_t>(i)].index != scan[static_cast<std::size_t>(i)].second) {
        why = "rank " + std::to_string(i) + " differs";
        return false;
      }
    return static_cast<Index>(nb.size()) == count;
  }));

  out.push_back(detail::run_invariant("delay samples dimension and permutation", trials, seed + 5, [](Rng& rng, std::string& why) {
    const Index n = uniform_index(rng, 2, 20), m = uniform_index(rng, 1, 4), d = uniform_index(rng, 1, 6);
    std::vector<Ensemble> window;
    for (Index b = 0; b < d; ++b) {
      Matrix mem(n, m);
      for (Index j = 0; j < n; ++j) mem.row(j) = standard_normal(m, rng).transpose();
      window.push_back(make_ensemble(mem, b));
    }
    const DelayEnsemble de = assemble_samples(window);
    if (de.samples.rows() != n || de.samples.cols() != d * m) {
      why = "wrong shape";
      return false;
    }
    // Newest block first, row j is particle j.
    for (Index b = 0; b < d; ++b)
      if (de.samples.middleCols(b * m, m) != window[static_cast<std::size_t>(d - 1 - b)].members) {
        why = "block order";
        return false;
      }
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Ensemble> permuted;
    for (const auto& e : window) {
      Matrix mem(n, m);
      for (Index j = 0; j < n; ++j) mem.row(j) = e.members.row(perm[static_cast<std::size_t>(j)]);
      permuted.push_back(make_ensemble(mem, e.time_index));
    }
    const DelayEnsemble dp = assemble_samples(permuted);
    for (Index j = 0; j < n; ++j)
      if (dp.samples.row(j) != de.samples.row(perm[static_cast<std::size_t>(j)])) {
        why = "rows not permuted consistently";
        return false;
      }
    why = "mean changed under permutation";
    return (dp.mean - de.mean).cwiseAbs().maxCoeff() < 1e-12;
  }));

  out.push_back(detail::run_invariant("metric formulas", trials, seed + 6, [](Rng& rng, std::string& why) {
    const Index steps = uniform_index(rng, 1, 40), n = uniform_index(rng, 1, 5);
    Matrix means(steps, n), truth(steps, n);
    Vector traces(steps);
    for (Index k = 0; k < steps; ++k) {
      means.row(k) = standard_normal(n, rng).transpose();
      truth.row(k) = standard_normal(n, rng).transpose();
      traces[k] = uniform(rng, 0.0, 3.0);
    }
    const Metrics m = compute_metrics(means, traces, truth);
    double se = 0.0, tr = 0.0;
    for (Index k = 0; k < steps; ++k) {
      for (Index i = 0; i < n; ++i) se += (means(k, i) - truth(k, i)) * (means(k, i) - truth(k, i));
      tr += traces[k];
    }
    const double rmse = std::sqrt(se / static_cast<double>(n * steps));
    const double spread = std::sqrt(tr / static_cast<double>(n * steps));
    why = "rmse " + fmt(m.rmse) + " vs " + fmt(rmse);
    return std::abs(m.rmse - rmse) < 1e-12 * (1 + rmse) &&
           std::abs(m.spread - spread) < 1e-12 * (1 + spread);
  }));
  return out;
}

inline CriterionResult invariants(const BenchOptions& opt) {
  const auto t0 = detail::tic();
  CriterionResult r{10, "invariant suites"};
  r.budget_seconds = 120.0;
  r.expected = "all suites pass " + std::to_string(opt.invariant_trials) + " randomized trials";
  const auto outcomes = invariant_suites(opt.invariant_trials);
  int failed_suites = 0;
  json det = json::array();
  std::string first;
  for (const auto& o : outcomes) {
    det.push_back({{"suite", o.name}, {"trials", o.trials}, {"failures", o.failures},
                   {"first_failure", o.first_failure}});
    if (o.failures) {
      ++failed_suites;
      if (first.empty()) first = o.name + ": " + o.first_failure;
    }
  }
  r.pass = failed_suites == 0;
  r.measured = std::to_string(outcomes.size() - failed_suites) + "/" +
               std::to_string(outcomes.size()) + " suites clean" +
               (first.empty() ? "" : " (" + first + ")");
  r.details = det;
  return detail::finish(r, t0);
}

// ===========================================================================
// Experimental criteria

/// Criterion 3: pendulum operator refinement.
inline CriterionResult pendulum_refinement(const BenchOptions& opt) {
  const auto t0 = detail::tic();
  CriterionResult r{3, "pendulum refinement"};
  r.budget_seconds = 300.0;
  r.expected = "error(0) in [0.05, 0.2], error(1) < 0.03, error(0)/error(1) > 3";
  std::vector<double> e0, e1, ratio;
  for (auto seed : opt.seeds) {
    ExperimentConfig cfg = with_seed(preset_pendulum(), seed);
    const TrajectorySet data = make_training_set(cfg);
    const Dictionary dict = cfg.pipeline.make_dictionary(1);
    const DmdOperator ref = reference_operator(data, cfg.observation, dict);
    const auto raw = observation_sequences(data);
    RefineConfig rc = cfg.pipeline.refine_config();
    rc.iterations = 1;
    const RefineResult res = refine(fit(raw, dict), raw, rc);
    e0.push_back(operator_error(res.operators[0].k_y, ref.k_y));
    e1.push_back(operator_error(res.operators[1].k_y, ref.k_y));
    ratio.push_back(e0.back() / e1.back());
    detail::log(opt, "pendulum seed " + std::to_string(seed) + ": " + fmt(e0.back()) + " -> " + fmt(e1.back()));
  }
  const double m0 = median(e0), m1 = median(e1), mr = median(ratio);
  r.pass = m0 >= 0.05 && m0 <= 0.2 && m1 < 0.03 && mr > 3.0;
  r.measured = "error(0)=" + fmt(m0) + ", error(1)=" + fmt(m1) + ", ratio=" + fmt(mr);
  r.details = {{"error0", e0}, {"error1", e1}, {"ratio", ratio}};
  return detail::finish(r, t0);
}

/// Criterion 4: triad refinement profile over t = 0..3.
inline CriterionResult triad_iterations(const BenchOptions& opt) {
  const auto t0 = detail::tic();
  CriterionResult r{4, "triad iteration profile"};
  r.budget_seconds = 300.0;
  r.expected = "error(0) > error(1) > error(2), error(2) < 0.03, |error(3)-error(2)| <= 0.2 error(2)";
  std::vector<std::vector<double>> errs(4);
  for (auto seed : opt.seeds) {
    ExperimentConfig cfg = with_seed(preset_triad(), seed);
    const TrajectorySet data = make_training_set(cfg);
    const Dictionary dict = cfg.pipeline.make_dictionary(2);
    const DmdOperator ref = reference_operator(data, cfg.observation, dict);
    const auto raw = observation_sequences(data);
    RefineConfig rc = cfg.pipeline.refine_config();
    rc.iterations = 3;
    const RefineResult res = refine(fit(raw, dict), raw, rc);
    std::string line = "triad seed " + std::to_string(seed) + ":";
    for (int t = 0; t < 4; ++t) {
      errs[static_cast<std::size_t>(t)].push_back(
          operator_error(res.operators[static_cast<std::size_t>(t)].k_y, ref.k_y));
      line += " " + fmt(errs[static_cast<std::size_t>(t)].back());
    }
    detail::log(opt, line);
  }
  std::vector<double> med;
  for (const auto& e : errs) med.push_back(median(e));
  r.pass = med[0] > med[1] && med[1] > med[2] && med[2] < 0.03 &&
           std::abs(med[3] - med[2]) <= 0.2 * med[2];
  r.measured = "errors " + fmt(med[0]) + ", " + fmt(med[1]) + ", " + fmt(med[2]) + ", " + fmt(med[3]);
  r.details = {{"median", med}, {"per_seed", errs}};
  return detail::finish(r, t0);
}

/// Criterion 5: triad sweep over the observation-noise variance.
inline CriterionResult triad_noise(const BenchOptions& opt) {
  const auto t0 = detail::tic();
  CriterionResult r{5, "triad noise robustness"};
  r.budget_seconds = 900.0;
  r.expected = "RMSE non-decreasing, growth 0.1->0.3 < 25%, spread < EnKF spread, RMSE within 30% of reference";
  const std::vector<double> levels{0.1, 0.15, 0.2, 0.25, 0.3};
  const std::vector<double> reference{0.291055, 0.303017, 0.319642, 0.330295, 0.335907};
  json rows = json::array();
  std::vector<double> rmse, spread, base_spread;
  for (double level : levels) {
    std::vector<double> rr, ss, br, bs;
    for (auto seed : opt.seeds) {
      ExperimentConfig cfg = with_seed(preset_triad(level), seed);
      const TrajectorySet train = make_training_set(cfg);
      const Trajectory test = make_test_trajectory(cfg);
      const RunResult run = run_pipeline(cfg, train, test);
      const Metrics base = baseline_metrics(cfg, test);
      rr.push_back(run.metrics.rmse);
      ss.push_back(run.metrics.spread);
      br.push_back(base.rmse);
      bs.push_back(base.spread);
      detail::log(opt, "triad r=" + fmt(level) + " seed " + std::to_string(seed) + ": rmse " +
                           fmt(rr.back()) + " spread " + fmt(ss.back()) + " | enkf " +
                           fmt(br.back()) + " " + fmt(bs.back()));
    }
    rmse.push_back(median(rr));
    spread.push_back(median(ss));
    base_spread.push_back(median(bs));
    rows.push_back({{"noise", level}, {"rmse", rmse.back()}, {"spread", spread.back()},
                    {"enkf_rmse", median(br)}, {"enkf_spread", base_spread.back()}});
  }
  bool monotone = true, spread_ok = true, abs_ok = true;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (i > 0) monotone &= rmse[i] >= rmse[i - 1];
    spread_ok &= spread[i] < base_spread[i];
    abs_ok &= within(rmse[i], reference[i], 0.3);
  }
  const double growth = rmse.back() / rmse.front() - 1.0;
  r.pass = monotone && spread_ok && abs_ok && growth < 0.25;
  std::string vals;
  for (double v : rmse) vals += (vals.empty() ? "" : ", ") + fmt(v);
  r.measured = "RMSE [" + vals + "], growth " + fmt(100 * growth, 3) + "%, monotone=" +
               (monotone ? "yes" : "no") + ", spread<EnKF=" + (spread_ok ? "yes" : "no") +
               ", within 30%=" + (abs_ok ? "yes" : "no");
  r.details = {{"table", rows}};
  return detail::finish(r, t0);
}

struct LorenzPair {
  double rmse_lc = 0, rmse_ll = 0, spread_lc = 0, spread_ll = 0;
};

inline LorenzPair lorenz_run(int observation, std::uint64_t seed, const BenchOptions& opt) {
  LorenzPair out;
  for (auto op : {AnalogOperator::kLocallyConstant, AnalogOperator::kLocallyLinear}) {
    ExperimentConfig cfg = with_seed(preset_lorenz63(observation), seed);
    cfg.pipeline.transition_operator = op;
    cfg.pipeline.reconstruction = op == AnalogOperator::kLocallyConstant
                                      ? ReconstructionKind::kLocallyConstant
                                      : ReconstructionKind::kLocallyLinear;
    const TrajectorySet train = make_training_set(cfg);
    const Trajectory test = make_test_trajectory(cfg);
    const RunResult run = run_pipeline(cfg, train, test);
    if (op == AnalogOperator::kLocallyConstant) {
      out.rmse_lc = run.metrics.rmse;
      out.spread_lc = run.metrics.spread;
    } else {
      out.rmse_ll = run.metrics.rmse;
      out.spread_ll = run.metrics.spread;
    }
    detail::log(opt, "lorenz63 h" + std::to_string(observation) + " " + to_string(op) + " seed " +
                         std::to_string(seed) + ": rmse " + fmt(run.metrics.rmse) + " spread " +
                         fmt(run.metrics.spread));
  }
  return out;
}

/// Criteria 6 and 7 share the h1 runs.
inline std::vector<CriterionResult> lorenz_criteria(const BenchOptions& opt) {
  auto t0 = detail::tic();
  std::vector<LorenzPair> h1;
  for (auto seed : opt.lorenz_seeds) h1.push_back(lorenz_run(1, seed, opt));
  const double h1_seconds = seconds_since(t0);
  auto med = [](const std::vector<LorenzPair>& v, double LorenzPair::*f) {
    std::vector<double> x;
    for (const auto& p : v) x.push_back(p.*f);
    return median(x);
  };
  CriterionResult c6{6, "Lorenz 63 operator comparison"};
  c6.budget_seconds = 600.0;
  c6.expected = "RMSE_LL < RMSE_LC, spread_LL > spread_LC, each within 40% of (2.9591, 2.2205, 0.3719, 1.0703)";
  const double rlc = med(h1, &LorenzPair::rmse_lc), rll = med(h1, &LorenzPair::rmse_ll);
  const double slc = med(h1, &LorenzPair::spread_lc), sll = med(h1, &LorenzPair::spread_ll);
  c6.pass = rll < rlc && sll > slc && within(rlc, 2.9591, 0.4) && within(rll, 2.2205, 0.4) &&
            within(slc, 0.3719, 0.4) && within(sll, 1.0703, 0.4);
  c6.measured = "RMSE_LC=" + fmt(rlc) + ", RMSE_LL=" + fmt(rll) + ", spread_LC=" + fmt(slc) +
                ", spread_LL=" + fmt(sll);
  c6.details = {{"rmse_lc", rlc}, {"rmse_ll", rll}, {"spread_lc", slc}, {"spread_ll", sll}};
  c6.seconds = h1_seconds;
  if (c6.seconds > c6.budget_seconds) {
    c6.pass = false;
    c6.measured += " (runtime over budget)";
  }

  t0 = detail::tic();
  std::vector<LorenzPair> h2;
  for (auto seed : opt.lorenz_seeds) h2.push_back(lorenz_run(2, seed, opt));
  CriterionResult c7{7, "Lorenz 63 observation information"};
  c7.budget_seconds = 900.0;
  c7.expected = "RMSE(h2, d=10) < RMSE(h1, d=20) for L-C and L-L";
  const double r2lc = med(h2, &LorenzPair::rmse_lc), r2ll = med(h2, &LorenzPair::rmse_ll);
  c7.pass = r2lc < rlc && r2ll < rll;
  c7.measured = "L-C " + fmt(r2lc) + " vs " + fmt(rlc) + ", L-L " + fmt(r2ll) + " vs " + fmt(rll);
  c7.details = {{"h2_rmse_lc", r2lc}, {"h2_rmse_ll", r2ll}, {"h1_rmse_lc", rlc}, {"h1_rmse_ll", rll}};
  // The h1 runs are shared with criterion 6 and counted in both budgets.
  c7.seconds = seconds_since(t0) + h1_seconds;
  if (c7.seconds > c7.budget_seconds) {
    c7.pass = false;
    c7.measured += " (runtime over budget)";
  }
  return {c6, c7};
}

/// Largest reflection asymmetry max_k max_x |u(x) - u(-x)| on the periodic
/// grid x_j = -1 + 2j/n (x_j mirrors to x_{(n-j) mod n}).
inline double reflection_asymmetry(const std::vector<PosteriorStateEstimate>& est) {
  double worst = 0.0;
  for (const auto& e : est) {
    const Index n = e.mean.size();
    for (Index j = 0; j < n; ++j)
      worst = std::max(worst, std::abs(e.mean[j] - e.mean[(n - j) % n]));
  }
  return worst;
}

/// Criterion 8: Allen-Cahn reconstruction methods.
inline CriterionResult allen_cahn_methods(const BenchOptions& opt) {
  const auto t0 = detail::tic();
  CriterionResult r{8, "Allen-Cahn method ordering"};
  r.budget_seconds = 900.0;
  r.expected = "RMSE_NN < RMSE_LC < RMSE_LL, RMSE_NN < 0.25, asymmetry < 0.1";
  std::vector<double> nn, lc, ll, asym;
  for (auto seed : opt.seeds) {
    ExperimentConfig cfg = with_seed(preset_allen_cahn(), seed);
    const TrajectorySet train = make_training_set(cfg);
    const Trajectory test = make_test_trajectory(cfg);
    SurrogateBundle bundle = offline(train, cfg.pipeline);
    const OnlineResult on = online(bundle, test.observations, cfg.pipeline, cfg.test_seed);
    nn.push_back(compute_metrics(on.estimates, test.states).rmse);
    asym.push_back(reflection_asymmetry(on.estimates));
    // Analog reconstruction from the same posterior means and filtered stream.
    for (auto kind : {ReconstructionKind::kLocallyConstant, ReconstructionKind::kLocallyLinear}) {
      SurrogateBundle alt = bundle;
      PipelineConfig pc = cfg.pipeline;
      pc.reconstruction = kind;
      alt.regressor.reset();
      alt.reconstruction_library.reset();
      mfda::detail::attach_reconstruction(alt, pc, train);
      const OnlineResult o2 = online(alt, test.observations, pc, cfg.test_seed);
      (kind == ReconstructionKind::kLocallyConstant ? lc : ll)
          .push_back(compute_metrics(o2.estimates, test.states).rmse);
    }
    detail::log(opt, "allen_cahn seed " + std::to_string(seed) + ": nn " + fmt(nn.back()) +
                         " lc " + fmt(lc.back()) + " ll " + fmt(ll.back()) + " asym " +
                         fmt(asym.back()));
  }
  const double mnn = median(nn), mlc = median(lc), mll = median(ll), masym = median(asym);
  r.pass = mnn < mlc && mlc < mll && mnn < 0.25 && masym < 0.1;
  r.measured = "RMSE_NN=" + fmt(mnn) + ", RMSE_LC=" + fmt(mlc) + ", RMSE_LL=" + fmt(mll) +
               ", asymmetry=" + fmt(masym);
  r.details = {{"nn", nn}, {"lc", lc}, {"ll", ll}, {"asymmetry", asym}};
  return detail::finish(r, t0);
}

/// Criterion 9: pendulum delay-length trend, scored on a common window.
inline CriterionResult delay_monotonicity(const BenchOptions& opt) {
  const auto t0 = detail::tic();
  CriterionResult r{9, "delay-length monotonicity"};
  r.budget_seconds = 600.0;
  r.expected = "omega relative error d=15 < d=5, spread d=15 < d=2";
  const std::vector<Index> delays{2, 5, 15};
  const Index start = 14;  // all delays scored on k >= 14
  std::vector<std::vector<double>> rel(3), spread(3);
  for (auto seed : opt.seeds) {
    ExperimentConfig cfg = with_seed(preset_pendulum(), seed);
    const TrajectorySet train = make_training_set(cfg);
    const Trajectory test = make_test_trajectory(cfg);
    SurrogateBundle base = offline_dmdt(train, cfg.pipeline);
    std::string line = "pendulum seed " + std::to_string(seed) + ":";
    for (std::size_t i = 0; i < delays.size(); ++i) {
      ExperimentConfig c = cfg;
      resolve_delay(c, delays[i]);
      SurrogateBundle b = base;
      b.delay = delays[i];
      b.regressor.reset();
      mfda::detail::attach_reconstruction(b, c.pipeline, train);
      const OnlineResult on = online(b, test.observations, c.pipeline, c.test_seed);
      std::vector<PosteriorStateEstimate> scored;
      for (const auto& e : on.estimates)
        if (e.time_index >= start) scored.push_back(e);
      rel[i].push_back(component_relative_error(scored, test.states, 0));
      spread[i].push_back(compute_metrics(scored, test.states).spread);
      line += " d=" + std::to_string(delays[i]) + " rel " + fmt(rel[i].back()) + " spread " +
              fmt(spread[i].back());
    }
    detail::log(opt, line);
  }
  const double r5 = median(rel[1]), r15 = median(rel[2]);
  const double s2 = median(spread[0]), s15 = median(spread[2]);
  r.pass = r15 < r5 && s15 < s2;
  r.measured = "omega rel err d=5 " + fmt(r5) + ", d=15 " + fmt(r15) + "; spread d=2 " + fmt(s2) +
               ", d=15 " + fmt(s15) + " (d=2 rel " + fmt(median(rel[0])) + ")";
  r.details = {{"delays", delays}, {"relative_error", rel}, {"spread", spread}};
  return detail::finish(r, t0);
}

// ===========================================================================
// Suites

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"pendulum", "triad", "lorenz63", "allen_cahn",
                                              "properties"};
  return names;
}

inline SuiteReport run_suite(const std::string& name, const BenchOptions& opt = {}) {
  SuiteReport rep;
  rep.suite = name;
  if (name == "properties") {
    rep.criteria.push_back(kalman_oracle(opt));
    rep.criteria.push_back(dmd_recovery(opt));
    rep.criteria.push_back(invariants(opt));
  } else if (name == "pendulum") {
    rep.criteria.push_back(pendulum_refinement(opt));
    rep.criteria.push_back(delay_monotonicity(opt));
  } else if (name == "triad") {
    rep.criteria.push_back(triad_iterations(opt));
    rep.criteria.push_back(triad_noise(opt));
  } else if (name == "lorenz63") {
    for (auto& c : lorenz_criteria(opt)) rep.criteria.push_back(std::move(c));
  } else if (name == "allen_cahn") {
    rep.criteria.push_back(allen_cahn_methods(opt));
  } else {
    throw ConfigError("unknown suite '" + name +
                      "' (expected pendulum, triad, lorenz63, allen_cahn or properties)");
  }
  return rep;
}

}  // namespace mfda::bench
