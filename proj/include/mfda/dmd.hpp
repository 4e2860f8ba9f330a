#pragma once

// Least-squares Koopman (DMD) surrogate for the dynamics of denoised
// observations, with EM-style refinement and sliding-window refits.

#include "mfda/common.hpp"
#include "mfda/ensemble_filter.hpp"
#include "mfda/linalg.hpp"

#include <cstdint>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

namespace mfda {

enum class DictionaryKind { kIdentity, kPolynomial, kCustom };

/// Observable dictionary Psi. The first m observables are always the
/// coordinate selectors psi_i(y) = y_i.
class Dictionary {
 public:
  using Observable = std::function<double(const Vector&)>;

  static Dictionary identity(Index m) {
    Dictionary d;
    d.kind_ = DictionaryKind::kIdentity;
    d.input_dim_ = m;
    d.size_ = m;
    return d;
  }

  /// Coordinates followed by every monomial of total degree 2..degree, each
  /// degree block in lexicographic order of non-decreasing index tuples.
  static Dictionary polynomial(Index m, int degree) {
    require(degree >= 1, "polynomial dictionary degree must be >= 1");
    Dictionary d;
    d.kind_ = DictionaryKind::kPolynomial;
    d.input_dim_ = m;
    d.degree_ = degree;
    for (int deg = 2; deg <= degree; ++deg) {
      std::vector<Index> idx(static_cast<std::size_t>(deg), 0);
      while (true) {
        d.monomials_.push_back(idx);
        int pos = deg - 1;
        while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == m - 1) --pos;
        if (pos < 0) break;
        const Index v = idx[static_cast<std::size_t>(pos)] + 1;
        for (int q = pos; q < deg; ++q) idx[static_cast<std::size_t>(q)] = v;
      }
    }
    d.size_ = m + static_cast<Index>(d.monomials_.size());
    return d;
  }

  /// Coordinates followed by user observables (not serialisable).
  static Dictionary custom(Index m, std::vector<Observable> extra) {
    Dictionary d;
    d.kind_ = DictionaryKind::kCustom;
    d.input_dim_ = m;
    d.extra_ = std::move(extra);
    d.size_ = m + static_cast<Index>(d.extra_.size());
    return d;
  }

  DictionaryKind kind() const { return kind_; }
  Index input_dim() const { return input_dim_; }
  Index size() const { return size_; }
  int degree() const { return degree_; }

  std::string descriptor() const {
    switch (kind_) {
      case DictionaryKind::kIdentity: return "identity";
      case DictionaryKind::kPolynomial: return "polynomial:" + std::to_string(degree_);
      case DictionaryKind::kCustom: return "custom";
    }
    return "unknown";
  }

  Vector lift(const Vector& y) const {
    require(y.size() == input_dim_, "lift: observation dimension mismatch");
    Vector out(size_);
    out.head(input_dim_) = y;
    Index pos = input_dim_;
    for (const auto& mono : monomials_) {
      double v = 1.0;
      for (Index i : mono) v *= y[i];
      out[pos++] = v;
    }
    for (const auto& f : extra_) out[pos++] = f(y);
    return out;
  }

  /// Lifts each row of an N x m matrix into an N_k x N column matrix.
  Matrix lift_columns(const Matrix& rows) const {
    Matrix out(size_, rows.rows());
    for (Index j = 0; j < rows.rows(); ++j) out.col(j) = lift(rows.row(j).transpose());
    return out;
  }

 private:
  DictionaryKind kind_ = DictionaryKind::kIdentity;
  Index input_dim_ = 0;
  Index size_ = 0;
  int degree_ = 1;
  std::vector<std::vector<Index>> monomials_;
  std::vector<Observable> extra_;
};

inline Vector lift(const Vector& y, const Dictionary& dict) { return dict.lift(y); }

struct DmdOperator {
  Matrix k;    // N_k x N_k
  Matrix k_y;  // first m rows of k
  Dictionary dictionary = Dictionary::identity(1);
  double tolerance = 1e-10;
  Index effective_rank = 0;
  Index pair_count = 0;
  int iteration = 0;
  std::uint64_t data_hash = 0;
  std::vector<std::string> warnings;

  Index observation_dim() const { return dictionary.input_dim(); }
};

namespace detail {

inline std::uint64_t hash_matrix(std::uint64_t h, const Matrix& a) {
  for (Index i = 0; i < a.size(); ++i) {
    double v = a.data()[i];
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = mix64(h ^ bits);
  }
  return h;
}

/// Lifted data matrices built from consecutive pairs inside each sequence.
inline std::pair<Matrix, Matrix> snapshot_pairs(const std::vector<Matrix>& sequences,
                                                const Dictionary& dict) {
  Index pairs = 0;
  for (const auto& s : sequences) pairs += std::max<Index>(0, s.rows() - 1);
  Matrix y0(dict.size(), pairs), y1(dict.size(), pairs);
  Index col = 0;
  for (const auto& s : sequences) {
    if (s.rows() < 2) continue;
    require(s.cols() == dict.input_dim(), "snapshot dimension does not match dictionary");
    const Matrix lifted = dict.lift_columns(s);
    const Index n = s.rows() - 1;
    y0.middleCols(col, n) = lifted.leftCols(n);
    y1.middleCols(col, n) = lifted.rightCols(n);
    col += n;
  }
  return {std::move(y0), std::move(y1)};
}

}  // namespace detail

/// K = Psi(Y1) Psi(Y0)^+ over within-sequence consecutive pairs.
inline DmdOperator fit(const std::vector<Matrix>& sequences, const Dictionary& dict,
                       double tolerance = 1e-10) {
  require(!sequences.empty(), "fit: no snapshot sequences");
  auto [y0, y1] = detail::snapshot_pairs(sequences, dict);
  require(y0.cols() > 0, "fit: no snapshot pairs");
  const Pseudoinverse pinv = pseudoinverse(y0, tolerance);
  DmdOperator op;
  op.dictionary = dict;
  op.tolerance = tolerance;
  op.k = y1 * pinv.value;
  op.k_y = op.k.topRows(dict.input_dim());
  op.effective_rank = pinv.rank;
  op.pair_count = y0.cols();
  std::uint64_t h = 0x5eedULL;
  for (const auto& s : sequences) h = detail::hash_matrix(h, s);
  op.data_hash = h;
  if (y0.cols() < dict.size())
    op.warnings.push_back("fewer snapshot pairs than dictionary size");
  if (pinv.rank < dict.size()) op.warnings.push_back("rank-deficient snapshot matrix");
  return op;
}

inline DmdOperator fit(const Matrix& sequence, const Dictionary& dict,
                       double tolerance = 1e-10) {
  return fit(std::vector<Matrix>{sequence}, dict, tolerance);
}

inline Vector predict_mean(const DmdOperator& op, const Vector& y) {
  return op.k_y * op.dictionary.lift(y);
}

/// Surrogate drift as a batch transition for the ensemble filter.
inline Transition dmd_transition(const DmdOperator& op) {
  if (op.dictionary.kind() == DictionaryKind::kIdentity)
    return [ky = op.k_y](const Matrix& x) -> Matrix { return x * ky.transpose(); };
  return [op](const Matrix& x) -> Matrix {
    return (op.k_y * op.dictionary.lift_columns(x)).transpose();
  };
}

/// Sum of squared Frobenius residuals ||Psi(Y1) - K Psi(Y0)||_F^2.
inline double dmd_cost(const DmdOperator& op, const std::vector<Matrix>& sequences) {
  auto [y0, y1] = detail::snapshot_pairs(sequences, op.dictionary);
  return (y1 - op.k * y0).squaredNorm();
}

/// Spectral norm of the difference of two observation-row blocks.
inline double operator_error(const Matrix& a, const Matrix& b) {
  const Matrix d = a - b;
  if (d.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(d);
  return svd.singularValues()[0];
}

struct RefineConfig {
  Index ensemble_size = 100;
  int iterations = 3;
  FilterOptions filter;
  double alpha = 0.02;
  double cov_floor = 1e-8;
  double initial_q_scale = 0.1;  // Q0 = scale * var(y) I
  double initial_r_scale = 0.1;  // R0 = scale * var(y) I
  double jacobian_cutoff = 0.0;  // see NoiseEstimate::jacobian_cutoff
  std::uint64_t seed = 0;
  bool keep_ensembles = false;   // keep final-pass ensembles per trajectory
};

struct RefineResult {
  std::vector<DmdOperator> operators;          // K^(0) ... K^(t_max)
  std::vector<double> costs;                   // J(K^(t)) on its own fit data
  std::vector<Matrix> posterior_means;         // final pass, per trajectory
  std::vector<std::vector<Ensemble>> ensembles;  // final pass, when kept
  NoiseEstimate noise;                         // averaged final estimate
};

/// Per-component variance of all observations, pooled over sequences.
inline Vector pooled_variance(const std::vector<Matrix>& sequences) {
  Index total = 0;
  const Index m = sequences.front().cols();
  Vector sum = Vector::Zero(m), sq = Vector::Zero(m);
  for (const auto& s : sequences) {
    total += s.rows();
    sum += s.colwise().sum().transpose();
    sq += s.array().square().colwise().sum().matrix().transpose();
  }
  const Vector mean = sum / static_cast<double>(total);
  return (sq / static_cast<double>(total) - mean.cwiseProduct(mean)).cwiseMax(1e-12);
}

inline NoiseEstimate initial_noise_estimate(const std::vector<Matrix>& sequences,
                                            const RefineConfig& cfg) {
  const Vector var = pooled_variance(sequences);
  const double scale = var.mean();
  const Index m = var.size();
  NoiseEstimate est =
      NoiseEstimate::initial(cfg.initial_q_scale * scale * Matrix::Identity(m, m),
                             cfg.initial_r_scale * scale * Matrix::Identity(m, m), cfg.alpha,
                             cfg.cov_floor);
  est.jacobian_cutoff = cfg.jacobian_cutoff;
  return est;
}

/// Average of several estimates (history cleared).
inline NoiseEstimate average_noise(const std::vector<NoiseEstimate>& all) {
  NoiseEstimate out = all.front();
  out.reset_history();
  out.q.setZero();
  out.r.setZero();
  for (const auto& e : all) {
    out.q += e.q;
    out.r += e.r;
  }
  out.q /= static_cast<double>(all.size());
  out.r /= static_cast<double>(all.size());
  return out;
}

/// Filters every sequence with the given surrogate transition (observation
/// operator = identity) and returns per-trajectory trails.
inline std::vector<FilterTrail> filter_trajectories(const std::vector<Matrix>& sequences,
                                                    const Transition& transition,
                                                    const NoiseEstimate& noise0,
                                                    Index ensemble_size,
                                                    FilterOptions opts,
                                                    std::uint64_t seed) {
  const Index m = sequences.front().cols();
  const Matrix h = Matrix::Identity(m, m);
  std::vector<FilterTrail> trails(sequences.size());
  parallel_for(static_cast<Index>(sequences.size()), [&](Index i) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(i), StreamRole::kFilter);
    const Matrix& y = sequences[static_cast<std::size_t>(i)];
    // Start from the first observation, spread by the current R estimate.
    const Ensemble init = sample_ensemble(y.row(0).transpose(), noise0.r, ensemble_size, rng, -1);
    trails[static_cast<std::size_t>(i)] =
        filter_sequence(y, transition, h, init, noise0, opts, rng);
  });
  return trails;
}

/// EM-style refinement: filter every trajectory under K^(t), refit on the
/// posterior means, repeat.
inline RefineResult refine(const DmdOperator& initial, const std::vector<Matrix>& raw,
                           const RefineConfig& cfg) {
  require(cfg.iterations >= 1, "refine: iterations must be >= 1");
  require(!raw.empty(), "refine: no trajectories");
  RefineResult out;
  out.operators.push_back(initial);
  out.costs.push_back(dmd_cost(initial, raw));
  NoiseEstimate noise = initial_noise_estimate(raw, cfg);
  FilterOptions opts = cfg.filter;
  opts.keep_ensembles = false;
  for (int t = 0; t < cfg.iterations; ++t) {
    const bool last = t + 1 == cfg.iterations;
    opts.keep_ensembles = last && cfg.keep_ensembles;
    std::vector<FilterTrail> trails;
    try {
      trails = filter_trajectories(raw, dmd_transition(out.operators.back()), noise,
                                   cfg.ensemble_size, opts,
                                   mix64(cfg.seed + static_cast<std::uint64_t>(t)));
    } catch (const NumericalError& e) {
      throw NumericalError("refine iteration " + std::to_string(t) + ": " + e.what());
    }
    std::vector<Matrix> means;
    std::vector<NoiseEstimate> finals;
    for (auto& tr : trails) {
      means.push_back(tr.means);
      finals.push_back(tr.final_noise);
    }
    DmdOperator next = fit(means, initial.dictionary, initial.tolerance);
    next.iteration = t + 1;
    out.costs.push_back(dmd_cost(next, means));
    out.operators.push_back(std::move(next));
    noise = average_noise(finals);
    if (last) {
      out.posterior_means = std::move(means);
      if (cfg.keep_ensembles)
        for (auto& tr : trails) out.ensembles.push_back(std::move(tr.ensembles));
    }
  }
  out.noise = noise;
  return out;
}

struct WindowUpdate {
  DmdOperator op;
  bool degenerate = false;
};

/// Refit on the consecutive pairs of a window of posterior means. A window
/// whose snapshots are all identical, or whose lifted snapshot matrix is
/// rank-deficient, leaves the previous operator in place.
inline WindowUpdate window_update(const DmdOperator& previous, const Matrix& window) {
  WindowUpdate out;
  const bool flat = window.rows() < 2 ||
                    (window.rowwise() - window.row(0)).cwiseAbs().maxCoeff() == 0.0;
  if (!flat) {
    DmdOperator next = fit(window, previous.dictionary, previous.tolerance);
    if (next.effective_rank >= previous.dictionary.size()) {
      next.iteration = previous.iteration;
      out.op = std::move(next);
      return out;
    }
  }
  out.op = previous;
  out.degenerate = true;
  out.op.warnings.push_back("degenerate window; operator not updated");
  return out;
}

}  // namespace mfda
