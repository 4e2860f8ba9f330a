#pragma once

#include "mfda/common.hpp"

#include <Eigen/SVD>
#include <Eigen/Eigenvalues>

#include <cmath>

namespace mfda {

struct Pseudoinverse {
  Matrix value;
  Index rank = 0;
  double condition = 0.0;  // ratio of largest to smallest retained singular value
};

/// Moore-Penrose inverse; singular values below max(tol * sigma_max, abs_tol)
/// are dropped.
inline Pseudoinverse pseudoinverse(const Matrix& a, double tol = 1e-10, double abs_tol = 0.0) {
  Pseudoinverse out;
  out.value = Matrix::Zero(a.cols(), a.rows());
  if (a.size() == 0) return out;
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  if (s.size() == 0 || !(s[0] > 0.0)) return out;
  const double cutoff = std::max(tol * s[0], abs_tol);
  Index r = 0;
  while (r < s.size() && s[r] > cutoff) ++r;
  out.rank = r;
  if (r == 0) return out;
  out.condition = s[0] / s[r - 1];
  const Matrix v = svd.matrixV().leftCols(r);
  const Matrix u = svd.matrixU().leftCols(r);
  out.value = v * s.head(r).cwiseInverse().asDiagonal() * u.transpose();
  return out;
}

/// Column means of a members-as-rows matrix.
inline Vector row_mean(const Matrix& members) {
  return members.colwise().mean().transpose();
}

/// Sample covariance (1/(N-1)) of a members-as-rows matrix.
inline Matrix sample_covariance(const Matrix& members) {
  const Index n = members.rows();
  require(n >= 2, "sample covariance needs at least two members");
  const Matrix centered = members.rowwise() - members.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(n - 1);
}

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Symmetric matrix with eigenvalues clipped from below at `floor`.
inline Matrix floor_eigenvalues(const Matrix& a, double floor) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(a));
  Vector lambda = eig.eigenvalues().cwiseMax(floor);
  const Matrix& v = eig.eigenvectors();
  return symmetrize(v * lambda.asDiagonal() * v.transpose());
}

/// Cholesky-like square root of a PSD matrix (via eigen-decomposition so
/// singular matrices are accepted). Returns L with L L^T = a.
inline Matrix psd_sqrt(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(a));
  Vector lambda = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * lambda.asDiagonal();
}

inline bool all_finite(const Matrix& a) { return a.allFinite(); }

/// Pairwise (recursive) summation of rows; keeps the averaging error at
/// O(log N) ulp.
inline Vector pairwise_row_sum(const Matrix& rows, Index begin, Index end) {
  if (end - begin <= 8) {
    Vector s = Vector::Zero(rows.cols());
    for (Index i = begin; i < end; ++i) s += rows.row(i).transpose();
    return s;
  }
  const Index mid = begin + (end - begin) / 2;
  return pairwise_row_sum(rows, begin, mid) + pairwise_row_sum(rows, mid, end);
}

}  // namespace mfda
