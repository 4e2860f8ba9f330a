#pragma once

// Delay-coordinate vectors of filtered observations: per-particle joint
// samples over a delay window, and false-nearest-neighbour delay selection.

#include "mfda/common.hpp"
#include "mfda/ensemble_filter.hpp"
#include "mfda/linalg.hpp"

#include <deque>
#include <limits>
#include <vector>

namespace mfda {

/// Flattened delay vector, newest block first: (y_k, y_{k-1}, ..., y_{k-d+1}).
/// `window` holds the blocks oldest-first as rows (d x m).
inline Vector delay_vector(const Matrix& window) {
  const Index d = window.rows(), m = window.cols();
  Vector out(d * m);
  for (Index b = 0; b < d; ++b) out.segment(b * m, m) = window.row(d - 1 - b).transpose();
  return out;
}

/// Delay vector ending at row k of a T x m series.
inline Vector delay_vector_at(const Matrix& series, Index k, Index d) {
  require(k >= d - 1 && k < series.rows(), "delay vector index out of range");
  return delay_vector(series.middleRows(k - d + 1, d));
}

/// All delay vectors of a series for k = d-1 .. T-1 as rows.
inline Matrix delay_matrix(const Matrix& series, Index d) {
  const Index count = series.rows() - d + 1;
  require(count >= 1, "series shorter than delay length");
  Matrix out(count, d * series.cols());
  for (Index k = d - 1; k < series.rows(); ++k)
    out.row(k - d + 1) = delay_vector_at(series, k, d).transpose();
  return out;
}

struct DelayEnsemble {
  Matrix samples;  // N x (d*m), newest block first
  Vector mean;
  Index time_index = 0;
  Index delay = 1;
  Index block_dim = 1;

  Index size() const { return samples.rows(); }
};

struct WarmupError : ContractViolation {
  using ContractViolation::ContractViolation;
};

/// Joint samples of the delay vector: sample j concatenates particle j's
/// analyses over the window. `window` is ordered oldest-first and must hold
/// exactly d ensembles with consistent particle lineage.
inline DelayEnsemble assemble_samples(const std::vector<const Ensemble*>& window) {
  if (window.empty()) throw WarmupError("assemble_samples: empty window");
  const Index d = static_cast<Index>(window.size());
  const Index n = window.front()->size();
  const Index m = window.front()->dim();
  DelayEnsemble out;
  out.delay = d;
  out.block_dim = m;
  out.time_index = window.back()->time_index;
  out.samples.resize(n, d * m);
  for (Index b = 0; b < d; ++b) {
    const Ensemble& e = *window[static_cast<std::size_t>(d - 1 - b)];
    require(e.size() == n && e.dim() == m, "assemble_samples: inconsistent ensembles");
    out.samples.middleCols(b * m, m) = e.members;
  }
  out.mean = pairwise_row_sum(out.samples, 0, n) / static_cast<double>(n);
  return out;
}

inline DelayEnsemble assemble_samples(const std::vector<Ensemble>& window) {
  std::vector<const Ensemble*> ptrs;
  for (const auto& e : window) ptrs.push_back(&e);
  return assemble_samples(ptrs);
}

/// Rolling store of the last d analysis ensembles.
class DelayHistory {
 public:
  explicit DelayHistory(Index delay) : delay_(delay) {
    require(delay >= 1, "delay length must be >= 1");
  }

  void push(const Ensemble& e) {
    buffer_.push_back(e);
    while (static_cast<Index>(buffer_.size()) > delay_) buffer_.pop_front();
  }

  bool ready() const { return static_cast<Index>(buffer_.size()) == delay_; }
  Index available() const { return static_cast<Index>(buffer_.size()); }
  Index delay() const { return delay_; }

  DelayEnsemble samples() const {
    if (!ready())
      throw WarmupError("delay window not yet filled (" + std::to_string(buffer_.size()) +
                        " of " + std::to_string(delay_) + " ensembles)");
    std::vector<const Ensemble*> ptrs;
    for (const auto& e : buffer_) ptrs.push_back(&e);
    return assemble_samples(ptrs);
  }

  /// Delay samples with the oldest available ensemble repeated to fill the
  /// window; used only as transition input during start-up.
  Matrix padded_samples() const {
    require(!buffer_.empty(), "delay history is empty");
    const Index n = buffer_.front().size(), m = buffer_.front().dim();
    Matrix out(n, delay_ * m);
    const Index have = available();
    for (Index b = 0; b < delay_; ++b) {
      const Index idx = b < have ? have - 1 - b : 0;
      out.middleCols(b * m, m) = buffer_[static_cast<std::size_t>(idx)].members;
    }
    return out;
  }

 private:
  Index delay_;
  std::deque<Ensemble> buffer_;
};

// ---------------------------------------------------------------------------
// False nearest neighbours.

struct FnnOptions {
  Index d_max = 25;
  double r_tol = 10.0;
  double threshold = 0.01;
  Index theiler_window = 10;  // temporal neighbours |i - j| <= w are skipped
};

struct FnnResult {
  Index delay = 1;
  bool achieved = false;
  std::vector<std::pair<Index, double>> table;  // (d, false-neighbour fraction)
};

/// Fraction of false nearest neighbours at delay length d.
inline double false_neighbor_fraction(const Matrix& series, Index d, const FnnOptions& opt) {
  const Index m = series.cols();
  const Index first = d;  // need y_{i-d} for the extension
  const Index count = series.rows() - first;
  require(count >= 2, "series too short for false-nearest-neighbour test");
  Matrix emb(count, d * m);
  for (Index i = first; i < series.rows(); ++i)
    emb.row(i - first) = delay_vector_at(series, i, d).transpose();

  Index false_count = 0, tested = 0;
  for (Index a = 0; a < count; ++a) {
    double best = std::numeric_limits<double>::infinity();
    Index best_j = -1;
    for (Index b = 0; b < count; ++b) {
      if (std::abs(a - b) <= opt.theiler_window) continue;
      const double dist = (emb.row(a) - emb.row(b)).squaredNorm();
      if (dist < best) {
        best = dist;
        best_j = b;
      }
    }
    if (best_j < 0) continue;
    ++tested;
    const Index ia = a + first, ib = best_j + first;
    const double ext = (series.row(ia - d) - series.row(ib - d)).norm();
    const double base = std::sqrt(best);
    if (base == 0.0 ? ext > 0.0 : ext / base > opt.r_tol) ++false_count;
  }
  require(tested > 0, "no admissible neighbour pairs (series too short)");
  return static_cast<double>(false_count) / static_cast<double>(tested);
}

/// Smallest d <= d_max whose false-neighbour fraction is below threshold.
inline FnnResult estimate_delay_fnn(const Matrix& series, const FnnOptions& opt = {}) {
  require(opt.d_max >= 1, "d_max must be >= 1");
  require(series.rows() > 2 * (opt.d_max + opt.theiler_window) + 2,
          "series too short for the requested d_max");
  FnnResult out;
  for (Index d = 1; d <= opt.d_max; ++d) {
    const double frac = false_neighbor_fraction(series, d, opt);
    out.table.emplace_back(d, frac);
    if (frac < opt.threshold) {
      out.delay = d;
      out.achieved = true;
      return out;
    }
  }
  out.delay = opt.d_max;
  return out;
}

}  // namespace mfda
