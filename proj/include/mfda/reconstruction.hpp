#pragma once

// Maps from delay vectors to model states (or to successor observations):
// a small feedforward regressor, and kernel-weighted analog operators over a
// library of historical delay vectors.

#include "mfda/common.hpp"
#include "mfda/linalg.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace mfda {

// ===========================================================================
// Feedforward regressor

struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& rows) {
    Standardizer s;
    s.mean = row_mean(rows);
    const Matrix centered = rows.rowwise() - s.mean.transpose();
    s.scale = (centered.colwise().squaredNorm() / static_cast<double>(rows.rows()))
                  .transpose()
                  .cwiseSqrt();
    for (Index i = 0; i < s.scale.size(); ++i)
      if (!(s.scale[i] > 1e-12)) s.scale[i] = 1.0;
    return s;
  }

  Matrix apply(const Matrix& rows) const {
    return (rows.rowwise() - mean.transpose()).array().rowwise() /
           scale.transpose().array();
  }
  Matrix invert(const Matrix& rows) const {
    return (rows.array().rowwise() * scale.transpose().array()).matrix().rowwise() +
           mean.transpose();
  }
};

struct ReconstructionDataset {
  Matrix inputs;   // P x (d*m) delay vectors
  Matrix targets;  // P x n states

  Index size() const { return inputs.rows(); }
};

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
};

enum class Activation { kTanh, kRelu, kIdentity };

inline Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "identity" || name == "linear") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + name + "'");
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  return "unknown";
}

struct RegressorSpec {
  std::vector<Index> hidden{64, 64};
  Activation activation = Activation::kTanh;
  std::string optimizer = "adam";  // "adam" or "sgd"
  double learning_rate = 1e-3;
  double final_lr_fraction = 0.1;  // lr decays geometrically to this fraction
  int epochs = 500;
  Index batch_size = 64;           // 0 = full batch
  std::uint64_t seed = 0;

  // Trained state.
  bool trained = false;
  std::vector<DenseLayer> layers;
  Standardizer input_norm;
  Standardizer output_norm;
  std::vector<double> loss_history;  // per epoch, standardized units
  double final_mse = 0.0;            // mean ||x - F(y)||^2 in original units

  /// Default architecture: two hidden layers of width max(64, 4 * input_dim).
  static RegressorSpec defaults_for(Index input_dim) {
    RegressorSpec s;
    const Index w = std::max<Index>(64, 4 * input_dim);
    s.hidden = {w, w};
    return s;
  }
};

namespace detail {

inline Matrix activate(const Matrix& z, Activation a) {
  switch (a) {
    case Activation::kTanh: return z.array().tanh().matrix();
    case Activation::kRelu: return z.cwiseMax(0.0);
    case Activation::kIdentity: return z;
  }
  return z;
}

/// Derivative expressed through the activation output.
inline Matrix activation_grad(const Matrix& out, const Matrix& z, Activation a) {
  switch (a) {
    case Activation::kTanh: return (1.0 - out.array().square()).matrix();
    case Activation::kRelu: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::kIdentity: return Matrix::Ones(z.rows(), z.cols());
  }
  return Matrix::Ones(z.rows(), z.cols());
}

/// Forward pass on standardized columns (features x batch).
inline Matrix forward(const std::vector<DenseLayer>& layers, Activation act,
                      const Matrix& x, std::vector<Matrix>* zs = nullptr,
                      std::vector<Matrix>* outs = nullptr) {
  Matrix a = x;
  if (outs) outs->push_back(a);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = layers[l].weight * a;
    z.colwise() += layers[l].bias;
    const bool last = l + 1 == layers.size();
    a = last ? z : activate(z, act);
    if (zs) zs->push_back(std::move(z));
    if (outs) outs->push_back(a);
  }
  return a;
}

}  // namespace detail

/// Trains F by minimising the mean squared reconstruction error.
inline RegressorSpec train_regressor(const ReconstructionDataset& data, RegressorSpec spec) {
  require(data.size() > 0, "train_regressor: empty dataset");
  require(data.inputs.rows() == data.targets.rows(),
          "train_regressor: input/target count mismatch");
  require(!spec.hidden.empty(), "train_regressor: need at least one hidden layer");
  require(spec.epochs >= 1, "train_regressor: epochs must be >= 1");

  spec.input_norm = Standardizer::fit(data.inputs);
  spec.output_norm = Standardizer::fit(data.targets);
  const Matrix x_all = spec.input_norm.apply(data.inputs).transpose();   // din x P
  const Matrix t_all = spec.output_norm.apply(data.targets).transpose(); // dout x P
  const Index p = data.size();
  const Index din = x_all.rows(), dout = t_all.rows();

  Rng rng = make_rng(spec.seed, 0, StreamRole::kTraining);
  std::normal_distribution<double> normal(0.0, 1.0);
  spec.layers.clear();
  Index fan_in = din;
  std::vector<Index> widths = spec.hidden;
  widths.push_back(dout);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const Index w = widths[l];
    DenseLayer layer;
    const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
    // Output layer starts at zero: mirrored outputs of symmetric targets then
    // receive identical updates and stay symmetric.
    if (l + 1 == widths.size())
      layer.weight = Matrix::Zero(w, fan_in);
    else
      layer.weight = Matrix::NullaryExpr(w, fan_in, [&] { return s * normal(rng); });
    layer.bias = Vector::Zero(w);
    spec.layers.push_back(std::move(layer));
    fan_in = w;
  }

  const std::size_t nl = spec.layers.size();
  std::vector<Matrix> mw(nl), vw(nl);
  std::vector<Vector> mb(nl), vb(nl);
  for (std::size_t l = 0; l < nl; ++l) {
    mw[l] = vw[l] = Matrix::Zero(spec.layers[l].weight.rows(), spec.layers[l].weight.cols());
    mb[l] = vb[l] = Vector::Zero(spec.layers[l].bias.size());
  }
  const bool adam = spec.optimizer == "adam";
  if (!adam && spec.optimizer != "sgd")
    throw ConfigError("unknown optimizer '" + spec.optimizer + "'");
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;

  const Index batch = spec.batch_size <= 0 ? p : std::min(spec.batch_size, p);
  std::vector<Index> order(static_cast<std::size_t>(p));
  std::iota(order.begin(), order.end(), 0);
  spec.loss_history.clear();

  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    const double frac = spec.epochs > 1 ? static_cast<double>(epoch) / (spec.epochs - 1) : 0.0;
    const double lr = spec.learning_rate * std::pow(spec.final_lr_fraction, frac);
    if (batch < p) std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (Index start = 0; start < p; start += batch) {
      const Index b = std::min(batch, p - start);
      Matrix xb(din, b), tb(dout, b);
      for (Index c = 0; c < b; ++c) {
        const Index idx = order[static_cast<std::size_t>(start + c)];
        xb.col(c) = x_all.col(idx);
        tb.col(c) = t_all.col(idx);
      }
      std::vector<Matrix> zs, outs;
      const Matrix y = detail::forward(spec.layers, spec.activation, xb, &zs, &outs);
      const Matrix err = y - tb;
      epoch_loss += err.squaredNorm();
      // d(mean over batch of ||err||^2)/dy
      Matrix delta = (2.0 / static_cast<double>(b)) * err;
      ++step;
      for (std::size_t li = nl; li-- > 0;) {
        const Matrix gw = delta * outs[li].transpose();
        const Vector gb = delta.rowwise().sum();
        if (li > 0) {
          delta = (spec.layers[li].weight.transpose() * delta)
                      .cwiseProduct(detail::activation_grad(outs[li], zs[li - 1],
                                                            spec.activation));
        }
        if (adam) {
          mw[li] = beta1 * mw[li] + (1 - beta1) * gw;
          vw[li] = beta2 * vw[li] + (1 - beta2) * gw.cwiseProduct(gw);
          mb[li] = beta1 * mb[li] + (1 - beta1) * gb;
          vb[li] = beta2 * vb[li] + (1 - beta2) * gb.cwiseProduct(gb);
          const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
          const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
          spec.layers[li].weight.array() -=
              lr * (mw[li].array() / c1) / ((vw[li].array() / c2).sqrt() + eps);
          spec.layers[li].bias.array() -=
              lr * (mb[li].array() / c1) / ((vb[li].array() / c2).sqrt() + eps);
        } else {
          spec.layers[li].weight -= lr * gw;
          spec.layers[li].bias -= lr * gb;
        }
      }
    }
    epoch_loss /= static_cast<double>(p);
    if (!std::isfinite(epoch_loss))
      throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch));
    spec.loss_history.push_back(epoch_loss);
  }
  spec.trained = true;
  const Matrix pred =
      spec.output_norm.invert(detail::forward(spec.layers, spec.activation, x_all).transpose());
  spec.final_mse = (pred - data.targets).rowwise().squaredNorm().mean();
  return spec;
}

/// Batch evaluation; rows of `inputs` are delay vectors, rows of the result
/// are states.
inline Matrix predict_regressor_batch(const RegressorSpec& spec, const Matrix& inputs) {
  require(spec.trained, "predict_regressor: regressor is not trained");
  require(inputs.cols() == spec.input_norm.mean.size(),
          "predict_regressor: input dimension mismatch");
  const Matrix x = spec.input_norm.apply(inputs).transpose();
  return spec.output_norm.invert(detail::forward(spec.layers, spec.activation, x).transpose());
}

inline Vector predict_regressor(const RegressorSpec& spec, const Vector& input) {
  return predict_regressor_batch(spec, input.transpose()).row(0).transpose();
}

/// Mean squared reconstruction error in original units.
inline double regressor_mse(const RegressorSpec& spec, const ReconstructionDataset& data) {
  const Matrix pred = predict_regressor_batch(spec, data.inputs);
  return (pred - data.targets).rowwise().squaredNorm().mean();
}

// ===========================================================================
// Analog operators

enum class LibraryRole { kTransition, kReconstruction };

enum class Weighting { kKernel, kUniform };

struct AnalogLibrary {
  Matrix keys;    // L x D delay vectors, in insertion order
  Matrix values;  // L x V successors or states
  LibraryRole role = LibraryRole::kReconstruction;
  // Kernel scale; values <= 0 select the per-query median heuristic.
  double lambda = 0.0;
  Weighting weighting = Weighting::kKernel;
  Index delay = 1;

  Index size() const { return keys.rows(); }
};

inline AnalogLibrary make_library(Matrix keys, Matrix values, LibraryRole role,
                                  Index delay = 1, double lambda = 0.0) {
  require(keys.rows() == values.rows(), "analog library: key/value count mismatch");
  AnalogLibrary lib;
  lib.keys = std::move(keys);
  lib.values = std::move(values);
  lib.role = role;
  lib.delay = delay;
  lib.lambda = lambda;
  return lib;
}

struct Neighbor {
  Index index;
  double distance;
};

namespace detail {

// `keys_t` holds one library key per column.
inline double exact_sq_distance(const Matrix& keys_t, Index col, const Vector& q) {
  const double* k = keys_t.col(col).data();
  double acc = 0.0;
  for (Index c = 0; c < q.size(); ++c) {
    const double diff = k[c] - q[c];
    acc += diff * diff;
  }
  return acc;
}

/// Exact (distance, index) ranking among `candidates`.
inline std::vector<Neighbor> rank_candidates(const Matrix& keys_t, const Vector& q,
                                             std::vector<Index>& candidates, Index count) {
  std::vector<std::pair<double, Index>> scored;
  scored.reserve(candidates.size());
  for (Index i : candidates) scored.emplace_back(exact_sq_distance(keys_t, i, q), i);
  std::partial_sort(scored.begin(), scored.begin() + count, scored.end());
  std::vector<Neighbor> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    const auto& [d2, k] = scored[static_cast<std::size_t>(i)];
    out.push_back({k, std::sqrt(d2)});
  }
  return out;
}

}  // namespace detail

/// The M nearest keys of every query row, each sorted by (distance, index).
/// Candidates come from the expansion |k|^2 - 2 q.k + |q|^2 (one matrix
/// product); everything within a rounding margin of the M-th candidate is
/// re-ranked with exact distances, so the result equals an exhaustive scan.
inline std::vector<std::vector<Neighbor>> knn_query_batch(const AnalogLibrary& lib,
                                                          const Matrix& queries, Index count) {
  require(count >= 1, "knn_query: need at least one neighbour");
  require(count <= lib.size(), "knn_query: more neighbours requested than library entries");
  require(queries.cols() == lib.keys.cols(), "knn_query: query dimension mismatch");
  const Index n = lib.size();
  const Vector key_sq = lib.keys.rowwise().squaredNorm();
  const double key_sq_max = n > 0 ? key_sq.maxCoeff() : 0.0;
  const Matrix keys_t = lib.keys.transpose();
  const Matrix cross = keys_t.transpose() * queries.transpose();  // L x Q
  std::vector<std::vector<Neighbor>> out(static_cast<std::size_t>(queries.rows()));
  parallel_for(queries.rows(), [&](Index j) {
    const Vector q = queries.row(j).transpose();
    const double q_sq = q.squaredNorm();
    const double* c = cross.col(j).data();
    // Largest of the `count` smallest approximate distances (without |q|^2).
    std::vector<double> heap;
    heap.reserve(static_cast<std::size_t>(count));
    for (Index i = 0; i < n; ++i) {
      const double a = key_sq[i] - 2.0 * c[i];
      if (static_cast<Index>(heap.size()) < count) {
        heap.push_back(a);
        std::push_heap(heap.begin(), heap.end());
      } else if (a < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = a;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    const double margin = 1e-9 * (q_sq + key_sq_max) + 1e-300;
    const double cutoff = heap.front() + 2.0 * margin;
    std::vector<Index> candidates;
    candidates.reserve(static_cast<std::size_t>(2 * count));
    for (Index i = 0; i < n; ++i)
      if (key_sq[i] - 2.0 * c[i] <= cutoff) candidates.push_back(i);
    out[static_cast<std::size_t>(j)] = detail::rank_candidates(keys_t, q, candidates, count);
  });
  return out;
}

inline std::vector<Neighbor> knn_query(const AnalogLibrary& lib, const Vector& q, Index count) {
  return knn_query_batch(lib, q.transpose(), count).front();
}

struct KernelWeights {
  Vector weights;
  double lambda = 0.0;
  bool uniform_fallback = false;
};

/// Median heuristic: 1 / (2 median(d)^2) over the neighbour distances.
inline double median_lambda(const std::vector<Neighbor>& nb) {
  std::vector<double> d;
  for (const auto& n : nb) d.push_back(n.distance);
  std::sort(d.begin(), d.end());
  const std::size_t h = d.size() / 2;
  double med = d.size() % 2 ? d[h] : 0.5 * (d[h - 1] + d[h]);
  if (!(med > 0.0)) med = d.back();
  if (!(med > 0.0)) return 1.0;
  return 1.0 / (2.0 * med * med);
}

/// w_i = exp(-lambda d_i^2) / sum_j exp(-lambda d_j^2); evaluated relative to
/// the nearest neighbour so the normalisation does not underflow.
inline KernelWeights kernel_weights(const std::vector<Neighbor>& nb, double lambda) {
  require(!nb.empty(), "kernel_weights: no neighbours");
  require(lambda > 0.0, "kernel_weights: lambda must be positive");
  KernelWeights out;
  out.lambda = lambda;
  const Index count = static_cast<Index>(nb.size());
  double dmin = std::numeric_limits<double>::infinity();
  for (const auto& n : nb) dmin = std::min(dmin, n.distance * n.distance);
  out.weights.resize(count);
  for (Index i = 0; i < count; ++i) {
    const double r = nb[static_cast<std::size_t>(i)].distance;
    // Floored so far neighbours keep a positive (negligible) weight.
    out.weights[i] = std::max(std::exp(-lambda * (r * r - dmin)), std::numeric_limits<double>::min());
  }
  const double total = out.weights.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    out.weights.setConstant(1.0 / static_cast<double>(count));
    out.uniform_fallback = true;
    return out;
  }
  out.weights /= total;
  return out;
}

inline KernelWeights library_weights(const AnalogLibrary& lib, const std::vector<Neighbor>& nb) {
  if (lib.weighting == Weighting::kUniform) {
    KernelWeights w;
    w.weights = Vector::Constant(static_cast<Index>(nb.size()), 1.0 / static_cast<double>(nb.size()));
    return w;
  }
  return kernel_weights(nb, lib.lambda > 0.0 ? lib.lambda : median_lambda(nb));
}

struct AnalogResult {
  Vector value;
  bool fallback = false;  // L-L fell back to L-C
};

/// Locally constant operator: kernel-weighted average of neighbour values.
inline AnalogResult lc_from_neighbors(const AnalogLibrary& lib, const std::vector<Neighbor>& nb) {
  const KernelWeights w = library_weights(lib, nb);
  AnalogResult out;
  out.value = Vector::Zero(lib.values.cols());
  for (std::size_t i = 0; i < nb.size(); ++i)
    out.value += w.weights[static_cast<Index>(i)] * lib.values.row(nb[i].index).transpose();
  return out;
}

/// Locally linear operator: weighted affine least squares from neighbour
/// keys to neighbour values, evaluated at q. The design is centred at q, so
/// the fitted intercept is the prediction.
inline AnalogResult ll_from_neighbors(const AnalogLibrary& lib, const Vector& q,
                                      const std::vector<Neighbor>& nb, double ridge = 1e-10) {
  const KernelWeights w = library_weights(lib, nb);
  const Index dim = lib.keys.cols();
  const Index mcount = static_cast<Index>(nb.size());
  Matrix x(mcount, dim + 1), v(mcount, lib.values.cols());
  for (Index i = 0; i < mcount; ++i) {
    const Index k = nb[static_cast<std::size_t>(i)].index;
    x(i, 0) = 1.0;
    x.row(i).tail(dim) = lib.keys.row(k) - q.transpose();
    v.row(i) = lib.values.row(k);
  }
  const Matrix xw = x.transpose() * w.weights.asDiagonal();
  Matrix gram = xw * x;
  const double scale = gram.diagonal().tail(dim).sum() / static_cast<double>(std::max<Index>(1, dim));
  gram.diagonal().tail(dim).array() += ridge * (scale > 0 ? scale : 1.0);
  Eigen::LDLT<Matrix> ldlt(gram);
  AnalogResult out;
  if (ldlt.info() == Eigen::Success) {
    const Matrix beta = ldlt.solve(xw * v);
    if (beta.allFinite() && (gram * beta - xw * v).norm() <= 1e-6 * (1.0 + (xw * v).norm())) {
      out.value = beta.row(0).transpose();
      return out;
    }
  }
  out = lc_from_neighbors(lib, nb);
  out.fallback = true;
  return out;
}

inline AnalogResult lc_apply(const AnalogLibrary& lib, const Vector& q, Index count) {
  return lc_from_neighbors(lib, knn_query(lib, q, count));
}

inline AnalogResult ll_apply(const AnalogLibrary& lib, const Vector& q, Index count,
                             double ridge = 1e-10) {
  return ll_from_neighbors(lib, q, knn_query(lib, q, count), ridge);
}

enum class AnalogOperator { kLocallyConstant, kLocallyLinear };

inline AnalogResult analog_apply(AnalogOperator op, const AnalogLibrary& lib, const Vector& q,
                                 Index count) {
  return op == AnalogOperator::kLocallyConstant ? lc_apply(lib, q, count)
                                                : ll_apply(lib, q, count);
}

/// Row-wise analog evaluation for a batch of queries.
inline Matrix analog_apply_batch(AnalogOperator op, const AnalogLibrary& lib,
                                 const Matrix& queries, Index count) {
  const auto neighbors = knn_query_batch(lib, queries, count);
  Matrix out(queries.rows(), lib.values.cols());
  parallel_for(queries.rows(), [&](Index j) {
    const auto& nb = neighbors[static_cast<std::size_t>(j)];
    const AnalogResult r = op == AnalogOperator::kLocallyConstant
                               ? lc_from_neighbors(lib, nb)
                               : ll_from_neighbors(lib, queries.row(j).transpose(), nb);
    out.row(j) = r.value.transpose();
  });
  return out;
}

}  // namespace mfda
