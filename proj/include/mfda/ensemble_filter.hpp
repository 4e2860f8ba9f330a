#pragma once

// Perturbed-observation ensemble Kalman filter with optional adaptive
// estimation of the model-error and observation-noise covariances from
// innovation lag-0 / lag-1 products.

#include "mfda/common.hpp"
#include "mfda/linalg.hpp"

#include <Eigen/Cholesky>

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mfda {

/// N members stored as rows of an N x p matrix. Row j is particle j at every
/// step; the filter never reorders rows.
struct Ensemble {
  Matrix members;
  Index time_index = 0;

  Index size() const { return members.rows(); }
  Index dim() const { return members.cols(); }
  Vector mean() const { return row_mean(members); }
  Matrix covariance() const { return sample_covariance(members); }
  /// sqrt(trace(P) / p)
  double spread() const {
    const Matrix centered = members.rowwise() - members.colwise().mean();
    return std::sqrt(centered.squaredNorm() /
                     static_cast<double>((size() - 1) * dim()));
  }
};

inline Ensemble make_ensemble(Matrix members, Index k = 0) {
  require(members.rows() >= 2, "ensemble needs at least two members");
  return Ensemble{std::move(members), k};
}

/// Gaussian ensemble around `mean` with covariance `cov`.
inline Ensemble sample_ensemble(const Vector& mean, const Matrix& cov, Index n,
                                Rng& rng, Index k = 0) {
  const Matrix root = psd_sqrt(cov);
  Matrix members(n, mean.size());
  for (Index j = 0; j < n; ++j)
    members.row(j) = (mean + root * standard_normal(mean.size(), rng)).transpose();
  return make_ensemble(std::move(members), k);
}

/// Batch transition: maps an N x p matrix of members to the N x p matrix of
/// their images, row by row.
using Transition = std::function<Matrix(const Matrix&)>;

inline Transition identity_transition() {
  return [](const Matrix& x) { return x; };
}

inline Transition linear_transition(Matrix a) {
  return [a = std::move(a)](const Matrix& x) -> Matrix { return x * a.transpose(); };
}

/// Applies the transition and checks every image is finite.
inline Matrix propagate(const Ensemble& ens, const Transition& transition) {
  Matrix mapped = transition(ens.members);
  require(mapped.rows() == ens.size() && mapped.cols() == ens.dim(),
          "transition changed the ensemble shape");
  for (Index j = 0; j < mapped.rows(); ++j) {
    if (!mapped.row(j).allFinite())
      throw FilterDivergence(j, "non-finite ensemble member " + std::to_string(j) +
                                    " after transition");
  }
  return mapped;
}

/// Adds independent N(0, Q) draws to each row.
inline Matrix perturb(Matrix mapped, const Matrix& q, Rng& rng) {
  if (q.cwiseAbs().maxCoeff() == 0.0) return mapped;
  const Matrix root = psd_sqrt(q);
  for (Index j = 0; j < mapped.rows(); ++j)
    mapped.row(j) += (root * standard_normal(q.rows(), rng)).transpose();
  return mapped;
}

inline Ensemble predict(const Ensemble& ens, const Transition& transition,
                        const Matrix& q, Rng& rng) {
  return Ensemble{perturb(propagate(ens, transition), q, rng), ens.time_index + 1};
}

/// Multiplicative inflation of the anomalies about the ensemble mean.
inline void inflate(Matrix& members, double factor) {
  if (factor == 1.0) return;
  const Eigen::RowVectorXd mu = members.colwise().mean();
  members = (factor * (members.rowwise() - mu)).rowwise() + mu;
}

struct GainResult {
  Matrix gain;                // p x m
  Matrix innovation_cov;      // H Sigma H^T + R + jitter
  double condition = 0.0;
};

/// K = Sigma H^T (H Sigma H^T + R)^{-1}, with a trace-scaled jitter added to
/// the innovation covariance before factorisation.
inline GainResult kalman_gain(const Matrix& sigma, const Matrix& h,
                              const Matrix& r, double jitter = 1e-10) {
  GainResult out;
  const Matrix sht = sigma * h.transpose();
  Matrix s = symmetrize(h * sht + r);
  const double scale = s.trace() / static_cast<double>(s.rows());
  s.diagonal().array() += jitter * scale;
  out.innovation_cov = s;
  Eigen::LLT<Matrix> llt(s);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  out.condition = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (llt.info() != Eigen::Success || !(lo > 0) || !(scale > 0)) {
    throw NumericalError("singular innovation covariance (condition estimate " +
                         std::to_string(out.condition) + ")");
  }
  out.gain = llt.solve(sht.transpose()).transpose();
  return out;
}

struct AnalysisResult {
  Ensemble analysis;
  Matrix gain;             // p x m
  Vector innovation;       // y - H mean(forecast)
  Matrix forecast_cov;     // Sigma (p x p), inflated
  Matrix forecast_obs_cov; // H Sigma H^T
};

inline AnalysisResult analyze_detailed(const Ensemble& forecast, const Vector& y,
                                       const Matrix& h, const Matrix& r, Rng& rng,
                                       double jitter = 1e-10) {
  require(h.cols() == forecast.dim(), "analyze: H does not match ensemble dimension");
  require(h.rows() == y.size(), "analyze: H does not match observation dimension");
  require(r.rows() == y.size() && r.cols() == y.size(), "analyze: R must be m x m");
  AnalysisResult out;
  out.forecast_cov = forecast.covariance();
  out.forecast_obs_cov = h * out.forecast_cov * h.transpose();
  const GainResult g = kalman_gain(out.forecast_cov, h, r, jitter);
  out.gain = g.gain;
  out.innovation = y - h * forecast.mean();

  const Matrix r_root = psd_sqrt(r);
  const bool noisy = r.cwiseAbs().maxCoeff() > 0.0;
  Matrix members = forecast.members;
  for (Index j = 0; j < members.rows(); ++j) {
    Vector pseudo = h * forecast.members.row(j).transpose();
    if (noisy) pseudo += r_root * standard_normal(y.size(), rng);
    members.row(j) += (g.gain * (y - pseudo)).transpose();
  }
  out.analysis = Ensemble{std::move(members), forecast.time_index};
  return out;
}

inline Ensemble analyze(const Ensemble& forecast, const Vector& y, const Matrix& h,
                        const Matrix& r, Rng& rng) {
  return analyze_detailed(forecast, y, h, r, rng).analysis;
}

// ---------------------------------------------------------------------------
// Adaptive noise estimation.

struct NoiseEstimate {
  Matrix q;  // model-error covariance, p x p
  Matrix r;  // observation-noise covariance, m x m
  double alpha = 0.02;
  double floor = 1e-8;
  bool adapt_q = true;
  bool adapt_r = true;
  Index history_length = 2;
  // Jacobian singular values at or below this are treated as zero in the Q
  // estimator.
  double jacobian_cutoff = 0.0;

  // Innovation history (newest first) and the quantities from the previous
  // step that the lag-1 estimator needs.
  std::deque<Vector> innovations;
  std::optional<Matrix> previous_gain;
  std::optional<Matrix> previous_qfree_cov;

  static NoiseEstimate initial(const Matrix& q0, const Matrix& r0,
                               double alpha = 0.02, double floor = 1e-8) {
    NoiseEstimate est;
    est.alpha = alpha;
    est.floor = floor;
    est.q = floor_eigenvalues(q0, floor);
    est.r = floor_eigenvalues(r0, floor);
    return est;
  }

  void reset_history() {
    innovations.clear();
    previous_gain.reset();
    previous_qfree_cov.reset();
  }
};

/// Statistics of the current forecast needed by adaptive_update.
struct PriorStats {
  Matrix forecast_obs_cov;  // H P^f H^T at this step
  Matrix qfree_cov;         // covariance of the transition images before noise
  Matrix jacobian;          // linearisation of the transition into this step
};

/// Least-squares linearisation of the transition from the ensemble pair.
inline Matrix ensemble_jacobian(const Matrix& before, const Matrix& after,
                                double tol = 1e-10) {
  const Matrix a = before.rowwise() - before.colwise().mean();
  const Matrix b = after.rowwise() - after.colwise().mean();
  return (pseudoinverse(a, tol).value * b).transpose();
}

/// One secondary-filter update of (Q, R):
///   R~ = e_k e_k^T - H P^f_k H^T
///   P~ = F^+ H^+ e_k e_{k-1}^T H^+T + K_{k-1} e_{k-1} e_{k-1}^T H^+T
///   Q~ = P~ - C_{k-1}
/// each blended as est <- (1 - alpha) est + alpha * instantaneous and floored.
inline NoiseEstimate adaptive_update(NoiseEstimate est, const Vector& innovation,
                                     const PriorStats& prior, const Matrix& gain,
                                     const Matrix& h) {
  const double a = est.alpha;
  if (est.adapt_r) {
    const Matrix r_inst = innovation * innovation.transpose() - prior.forecast_obs_cov;
    est.r = floor_eigenvalues((1.0 - a) * est.r + a * symmetrize(r_inst), est.floor);
  }
  if (est.adapt_q && !est.innovations.empty() && est.previous_gain &&
      est.previous_qfree_cov) {
    const Vector& prev = est.innovations.front();
    const Matrix h_pinv = pseudoinverse(h).value;
    const Matrix f_pinv = pseudoinverse(prior.jacobian, 1e-10, est.jacobian_cutoff).value;
    const Matrix p_inst = f_pinv * h_pinv * innovation * prev.transpose() * h_pinv.transpose() +
                          *est.previous_gain * prev * prev.transpose() * h_pinv.transpose();
    const Matrix q_inst = symmetrize(p_inst) - *est.previous_qfree_cov;
    est.q = floor_eigenvalues((1.0 - a) * est.q + a * q_inst, est.floor);
  }
  est.innovations.push_front(innovation);
  while (static_cast<Index>(est.innovations.size()) > std::max<Index>(1, est.history_length))
    est.innovations.pop_back();
  est.previous_gain = gain;
  est.previous_qfree_cov = prior.qfree_cov;
  return est;
}

// ---------------------------------------------------------------------------
// Sequential filtering.

struct FilterOptions {
  bool adaptive = true;
  double inflation = 1.0;
  double jitter = 1e-10;
  bool keep_ensembles = false;
};

struct FilterTrail {
  Matrix means;    // T x p posterior means
  Vector spreads;  // T, sqrt(trace(P^a)/p)
  std::vector<Ensemble> ensembles;  // only when keep_ensembles
  NoiseEstimate final_noise;
};

/// Called after every analysis with (step index, analysis ensemble).
using AnalysisObserver = std::function<void(Index, const Ensemble&)>;

/// One predict/analyze cycle; updates `noise` in place when adaptive.
inline Ensemble filter_step(const Ensemble& previous, const Transition& transition,
                            const Vector& y, const Matrix& h, NoiseEstimate& noise,
                            const FilterOptions& opts, Rng& rng) {
  const Matrix mapped = propagate(previous, transition);
  Matrix members = perturb(mapped, noise.q, rng);
  inflate(members, opts.inflation);
  Ensemble forecast{std::move(members), previous.time_index + 1};
  AnalysisResult res = analyze_detailed(forecast, y, h, noise.r, rng, opts.jitter);
  if (opts.adaptive) {
    PriorStats prior;
    prior.forecast_obs_cov = res.forecast_obs_cov;
    prior.qfree_cov = sample_covariance(mapped);
    prior.jacobian = ensemble_jacobian(previous.members, mapped);
    noise = adaptive_update(std::move(noise), res.innovation, prior, res.gain, h);
  }
  return std::move(res.analysis);
}

inline FilterTrail filter_sequence(const Matrix& y_seq, const Transition& transition,
                                   const Matrix& h, const Ensemble& init,
                                   NoiseEstimate noise, const FilterOptions& opts,
                                   Rng& rng, const AnalysisObserver& observer = {}) {
  require(y_seq.rows() >= 1, "filter_sequence: empty observation sequence");
  require(y_seq.cols() == h.rows(), "filter_sequence: observation dimension mismatch");
  require(init.dim() == h.cols(), "filter_sequence: ensemble dimension mismatch");
  FilterTrail trail;
  const Index steps = y_seq.rows();
  trail.means.resize(steps, init.dim());
  trail.spreads.resize(steps);
  Ensemble current = init;
  for (Index k = 0; k < steps; ++k) {
    try {
      current = filter_step(current, transition, y_seq.row(k).transpose(), h, noise,
                            opts, rng);
    } catch (const FilterDivergence& e) {
      throw FilterDivergence(e.member_index,
                             std::string(e.what()) + " at step " + std::to_string(k));
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at step " + std::to_string(k));
    }
    current.time_index = k;
    trail.means.row(k) = current.mean().transpose();
    trail.spreads[k] = current.spread();
    if (opts.keep_ensembles) trail.ensembles.push_back(current);
    if (observer) observer(k, current);
  }
  trail.final_noise = std::move(noise);
  return trail;
}

/// Exact Kalman filter for linear-Gaussian systems; used as a reference.
struct KalmanTrail {
  Matrix means;
  std::vector<Matrix> covariances;
};

inline KalmanTrail kalman_filter(const Matrix& y_seq, const Matrix& a, const Matrix& q,
                                 const Matrix& h, const Matrix& r, const Vector& m0,
                                 const Matrix& p0) {
  KalmanTrail out;
  out.means.resize(y_seq.rows(), m0.size());
  Vector m = m0;
  Matrix p = p0;
  for (Index k = 0; k < y_seq.rows(); ++k) {
    m = a * m;
    p = a * p * a.transpose() + q;
    const Matrix s = h * p * h.transpose() + r;
    const Matrix k_gain = p * h.transpose() * s.inverse();
    m += k_gain * (y_seq.row(k).transpose() - h * m);
    p = symmetrize((Matrix::Identity(m.size(), m.size()) - k_gain * h) * p);
    out.means.row(k) = m.transpose();
    out.covariances.push_back(p);
  }
  return out;
}

}  // namespace mfda
