#include "mfda/ensemble_filter.hpp"

#include <gtest/gtest.h>

using namespace mfda;

namespace {

// Information-form Kalman filter, written independently of the library.
Matrix information_filter(const Matrix& y, const Matrix& a, const Matrix& q, const Matrix& h,
                          const Matrix& r, const Vector& m0, const Matrix& p0,
                          std::vector<Matrix>* covs = nullptr) {
  Matrix out(y.rows(), m0.size());
  Vector m = m0;
  Matrix p = p0;
  const Matrix r_inv = r.inverse();
  for (Index k = 0; k < y.rows(); ++k) {
    const Vector mf = a * m;
    const Matrix pf = a * p * a.transpose() + q;
    const Matrix info = pf.inverse() + h.transpose() * r_inv * h;
    p = info.inverse();
    m = p * (pf.inverse() * mf + h.transpose() * r_inv * y.row(k).transpose());
    out.row(k) = m.transpose();
    if (covs) covs->push_back(p);
  }
  return out;
}

struct LinearSystem {
  Matrix a, q, h, r;
  Vector m0;
  Matrix p0;
  Matrix y;
};

LinearSystem make_system(std::uint64_t seed, Index steps) {
  LinearSystem s;
  s.a.resize(2, 2);
  s.a << 0.9, 0.2, -0.2, 0.9;
  s.q = 0.1 * Matrix::Identity(2, 2);
  s.h.resize(1, 2);
  s.h << 1.0, 0.0;
  s.r = Matrix::Constant(1, 1, 0.5);
  s.m0 = Vector::Zero(2);
  s.p0 = Matrix::Identity(2, 2);
  Rng rng = make_rng(seed, 0, StreamRole::kMisc);
  s.y.resize(steps, 1);
  Vector x = standard_normal(2, rng);
  for (Index k = 0; k < steps; ++k) {
    x = s.a * x + std::sqrt(0.1) * standard_normal(2, rng);
    s.y(k, 0) = x[0] + std::sqrt(0.5) * standard_normal(1, rng)[0];
  }
  return s;
}

}  // namespace

TEST(Gain, NormalEquations) {
  Matrix sigma(2, 2);
  sigma << 2.0, 0.3, 0.3, 1.0;
  Matrix h(1, 2);
  h << 1.0, 1.0;
  const Matrix r = Matrix::Constant(1, 1, 0.4);
  const GainResult g = kalman_gain(sigma, h, r, 0.0);
  const Matrix s = h * sigma * h.transpose() + r;
  EXPECT_LT((g.gain * s - sigma * h.transpose()).norm(), 1e-12);
}

TEST(Predict, IdentityWithoutNoiseIsExact) {
  Rng rng = make_rng(1, 0, StreamRole::kFilter);
  const Ensemble e = sample_ensemble(Vector::Ones(3), Matrix::Identity(3, 3), 20, rng);
  const Ensemble f = predict(e, identity_transition(), Matrix::Zero(3, 3), rng);
  EXPECT_EQ(f.members, e.members);
}

TEST(Predict, LinearMeanLimit) {
  Rng rng = make_rng(2, 0, StreamRole::kFilter);
  Matrix a(2, 2);
  a << 0.5, 1.0, 0.0, -2.0;
  const Vector mu = (Vector(2) << 1.0, 2.0).finished();
  const Ensemble e = sample_ensemble(mu, Matrix::Identity(2, 2), 100000, rng);
  const Ensemble f = predict(e, linear_transition(a), Matrix::Zero(2, 2), rng);
  EXPECT_LT((f.mean() - a * e.mean()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((f.mean() - a * mu).cwiseAbs().maxCoeff(), 1e-2 * 5);
}

TEST(Predict, MatchesPerMemberLoop) {
  Rng rng = make_rng(3, 0, StreamRole::kFilter);
  Matrix k(2, 2);
  k << 0.99, 0.05, -0.05, 0.99;
  const Ensemble e = sample_ensemble(Vector::Zero(2), Matrix::Identity(2, 2), 50, rng);
  const Matrix mapped = propagate(e, linear_transition(k));
  for (Index j = 0; j < 50; ++j)
    EXPECT_LT((mapped.row(j).transpose() - k * e.members.row(j).transpose()).norm(), 1e-14);
}

TEST(Predict, NonFiniteMemberIsReported) {
  Rng rng = make_rng(3, 0, StreamRole::kFilter);
  const Ensemble e = sample_ensemble(Vector::Zero(2), Matrix::Identity(2, 2), 5, rng);
  Transition bad = [](const Matrix& x) {
    Matrix y = x;
    y(3, 1) = std::numeric_limits<double>::quiet_NaN();
    return y;
  };
  try {
    propagate(e, bad);
    FAIL() << "expected divergence";
  } catch (const FilterDivergence& err) {
    EXPECT_EQ(err.member_index, 3);
  }
}

TEST(Analyze, HugeNoiseLeavesForecast) {
  Rng rng = make_rng(4, 0, StreamRole::kFilter);
  const Ensemble f = sample_ensemble(Vector::Zero(2), Matrix::Identity(2, 2), 50, rng);
  Matrix h(1, 2);
  h << 1.0, 0.0;
  const Ensemble a = analyze(f, Vector::Constant(1, 3.0), h, 1e12 * Matrix::Identity(1, 1), rng);
  EXPECT_LT((a.members - f.members).cwiseAbs().maxCoeff(), 1e-4 * f.members.cwiseAbs().maxCoeff());
}

TEST(Analyze, ScalarKalmanOracle) {
  Rng rng = make_rng(5, 0, StreamRole::kFilter);
  const Index n = 20000;
  const double prior_var = 2.0, r = 0.5, y = 1.0;
  const Ensemble f = sample_ensemble(Vector::Zero(1), Matrix::Constant(1, 1, prior_var), n, rng);
  const AnalysisResult res = analyze_detailed(f, Vector::Constant(1, y), Matrix::Identity(1, 1),
                                              Matrix::Constant(1, 1, r), rng);
  const double sf2 = f.covariance()(0, 0);
  EXPECT_NEAR(res.gain(0, 0), sf2 / (sf2 + r), 1e-8);
  const double gain = prior_var / (prior_var + r);
  const double post_mean = gain * y;
  const double post_var = (1 - gain) * prior_var;
  EXPECT_NEAR(res.analysis.mean()[0], post_mean, 4 * std::sqrt(prior_var / n) + 4 * std::sqrt(r / n));
  EXPECT_NEAR(res.analysis.covariance()(0, 0), post_var, 0.05 * post_var);
}

TEST(Analyze, ReducesObservedMisfit) {
  Rng rng = make_rng(6, 0, StreamRole::kFilter);
  const Ensemble f = sample_ensemble(Vector::Zero(3), Matrix::Identity(3, 3), 200, rng);
  Matrix h(2, 3);
  h << 1, 1, 0, 0, 0, 1;
  const Vector y = (Vector(2) << 1.5, -0.7).finished();
  const Ensemble a = analyze(f, y, h, 1e-3 * Matrix::Identity(2, 2), rng);
  EXPECT_LT((h * a.mean() - y).norm(), (h * f.mean() - y).norm());
}

TEST(Adaptive, ZeroInnovationsDecayToFloor) {
  NoiseEstimate est = NoiseEstimate::initial(Matrix::Identity(1, 1), Matrix::Identity(1, 1), 0.2, 1e-8);
  PriorStats prior{Matrix::Zero(1, 1), Matrix::Zero(1, 1), Matrix::Identity(1, 1)};
  for (int i = 0; i < 400; ++i)
    est = adaptive_update(est, Vector::Zero(1), prior, Matrix::Zero(1, 1), Matrix::Identity(1, 1));
  EXPECT_LT(est.r(0, 0), 1e-6);
  EXPECT_GE(est.r(0, 0), 1e-8 * (1 - 1e-12));
}

TEST(Adaptive, AlphaOneIsInstantaneous) {
  NoiseEstimate est = NoiseEstimate::initial(Matrix::Identity(1, 1), Matrix::Identity(1, 1), 1.0);
  PriorStats prior{Matrix::Constant(1, 1, 0.25), Matrix::Zero(1, 1), Matrix::Identity(1, 1)};
  est = adaptive_update(est, Vector::Constant(1, 2.0), prior, Matrix::Zero(1, 1), Matrix::Identity(1, 1));
  EXPECT_NEAR(est.r(0, 0), 4.0 - 0.25, 1e-14);
  est = adaptive_update(est, Vector::Constant(1, 0.1), prior, Matrix::Zero(1, 1), Matrix::Identity(1, 1));
  EXPECT_NEAR(est.r(0, 0), 1e-8, 1e-20);  // 0.01 - 0.25 < 0 is floored
}

TEST(Adaptive, RecoversObservationNoise) {
  // Scalar AR(1) with known noise; the filter starts from wrong covariances.
  const double phi = 0.95, q_true = 0.01, r_true = 0.2;
  Rng data = make_rng(8, 0, StreamRole::kMisc);
  const Index steps = 2000;
  Matrix y(steps, 1);
  double x = 0.0;
  for (Index k = 0; k < steps; ++k) {
    x = phi * x + std::sqrt(q_true) * standard_normal(1, data)[0];
    y(k, 0) = x + std::sqrt(r_true) * standard_normal(1, data)[0];
  }
  Rng rng = make_rng(8, 1, StreamRole::kFilter);
  NoiseEstimate noise = NoiseEstimate::initial(Matrix::Constant(1, 1, 0.1), Matrix::Constant(1, 1, 1.0));
  const Ensemble init = sample_ensemble(Vector::Zero(1), Matrix::Identity(1, 1), 100, rng);
  double r_sum = 0.0;
  Index count = 0;
  NoiseEstimate current = noise;
  Ensemble e = init;
  FilterOptions fo;
  for (Index k = 0; k < steps; ++k) {
    e = filter_step(e, linear_transition(Matrix::Constant(1, 1, phi)), y.row(k).transpose(),
                    Matrix::Identity(1, 1), current, fo, rng);
    if (k >= steps / 4) {
      r_sum += current.r(0, 0);
      ++count;
    }
  }
  EXPECT_NEAR(r_sum / static_cast<double>(count), r_true, 0.3 * r_true);
}

TEST(FilterSequence, OneStep) {
  Rng rng = make_rng(9, 0, StreamRole::kFilter);
  const Ensemble init = sample_ensemble(Vector::Zero(1), Matrix::Identity(1, 1), 10, rng, -1);
  int calls = 0;
  const FilterTrail t = filter_sequence(Matrix::Ones(1, 1), identity_transition(), Matrix::Identity(1, 1), init,
                                        NoiseEstimate::initial(Matrix::Identity(1, 1), Matrix::Identity(1, 1)),
                                        FilterOptions{}, rng, [&](Index k, const Ensemble&) {
                                          EXPECT_EQ(k, 0);
                                          ++calls;
                                        });
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(t.means.rows(), 1);
}

TEST(KalmanReference, MatchesInformationForm) {
  const LinearSystem s = make_system(10, 300);
  std::vector<Matrix> covs;
  const Matrix expect = information_filter(s.y, s.a, s.q, s.h, s.r, s.m0, s.p0, &covs);
  const KalmanTrail kf = kalman_filter(s.y, s.a, s.q, s.h, s.r, s.m0, s.p0);
  EXPECT_LT((kf.means - expect).cwiseAbs().maxCoeff(), 1e-10);
  for (std::size_t k = 0; k < covs.size(); ++k) EXPECT_LT((kf.covariances[k] - covs[k]).norm(), 1e-10);
}

TEST(EnKF, ApproachesExactKalman) {
  const LinearSystem s = make_system(11, 500);
  std::vector<Matrix> covs;
  const Matrix kf = information_filter(s.y, s.a, s.q, s.h, s.r, s.m0, s.p0, &covs);
  Rng rng = make_rng(11, 1, StreamRole::kFilter);
  FilterOptions fo;
  fo.adaptive = false;
  const Ensemble init = sample_ensemble(s.m0, s.p0, 5000, rng, -1);
  const FilterTrail t = filter_sequence(s.y, linear_transition(s.a), s.h, init,
                                        NoiseEstimate::initial(s.q, s.r), fo, rng);
  double acc = 0.0;
  for (Index k = 0; k < s.y.rows(); ++k)
    for (Index i = 0; i < 2; ++i)
      acc += std::pow((t.means(k, i) - kf(k, i)) / std::sqrt(covs[static_cast<std::size_t>(k)](i, i)), 2);
  EXPECT_LT(std::sqrt(acc / (2.0 * s.y.rows())), 0.05);
}

TEST(Inflation, ScalesAnomalies) {
  Matrix m(3, 1);
  m << 1, 2, 6;
  inflate(m, 2.0);
  EXPECT_DOUBLE_EQ(m(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(m(2, 0), 9.0);
}
