// Runs every bench suite and prints one pass/fail line per acceptance
// criterion. The Kalman criterion is cross-checked here against a separate
// Joseph-form filter written without the library's filtering code.

#include "mfda/bench.hpp"

#include <algorithm>
#include <iostream>

using namespace mfda;

namespace {

struct OracleTrail {
  Matrix means;
  std::vector<Matrix> covariances;
};

OracleTrail joseph_filter(const Matrix& y, const Matrix& a, const Matrix& q, const Matrix& h,
                          double r, Vector m, Matrix p) {
  OracleTrail out;
  out.means.resize(y.rows(), m.size());
  const Matrix eye = Matrix::Identity(m.size(), m.size());
  for (Index k = 0; k < y.rows(); ++k) {
    m = a * m;
    p = a * p * a.transpose() + q;
    const double s = (h * p * h.transpose())(0, 0) + r;
    const Vector gain = p * h.transpose() / s;
    m += gain * (y(k, 0) - (h * m)(0, 0));
    const Matrix ikh = eye - gain * h;
    p = ikh * p * ikh.transpose() + r * gain * gain.transpose();
    out.means.row(k) = m.transpose();
    out.covariances.push_back(p);
  }
  return out;
}

// Largest normalized gap between the library's exact filter and the oracle on
// the criterion's data streams.
double kalman_cross_check(const bench::BenchOptions& opt) {
  Matrix a(2, 2);
  a << 0.9, 0.2, -0.2, 0.9;
  const Matrix q = 0.1 * Matrix::Identity(2, 2);
  Matrix h(1, 2);
  h << 1.0, 0.0;
  const Matrix rr = Matrix::Constant(1, 1, 0.5);
  const Vector m0 = Vector::Zero(2);
  const Matrix p0 = Matrix::Identity(2, 2);
  double worst = 0.0;
  for (auto seed : opt.seeds) {
    Rng rng = make_rng(seed, 0, StreamRole::kMisc);
    Matrix y(500, 1);
    Vector x = m0 + psd_sqrt(p0) * standard_normal(2, rng);
    for (Index k = 0; k < y.rows(); ++k) {
      x = a * x + psd_sqrt(q) * standard_normal(2, rng);
      y.row(k) = (h * x + psd_sqrt(rr) * standard_normal(1, rng)).transpose();
    }
    const KalmanTrail lib = kalman_filter(y, a, q, h, rr, m0, p0);
    const OracleTrail ref = joseph_filter(y, a, q, h, 0.5, m0, p0);
    for (Index k = 0; k < y.rows(); ++k)
      for (Index i = 0; i < 2; ++i)
        worst = std::max(worst, std::abs(lib.means(k, i) - ref.means(k, i)) /
                                    std::sqrt(ref.covariances[static_cast<std::size_t>(k)](i, i)));
  }
  return worst;
}

}  // namespace

int main() {
  const bench::BenchOptions opt;
  std::vector<bench::CriterionResult> all;
  for (const auto& suite : {"properties", "pendulum", "triad", "lorenz63", "allen_cahn"}) {
    try {
      const bench::SuiteReport rep = bench::run_suite(suite, opt);
      for (const auto& c : rep.criteria) all.push_back(c);
    } catch (const std::exception& e) {
      std::cerr << "suite " << suite << " aborted: " << e.what() << "\n";
    }
  }

  const double gap = kalman_cross_check(opt);
  for (auto& c : all) {
    if (c.id != 1) continue;
    const bool agree = gap < 1e-9;
    c.pass = c.pass && agree;
    c.measured += "; exact filter vs independent oracle max gap " + bench::fmt(gap);
  }

  std::sort(all.begin(), all.end(),
            [](const auto& x, const auto& y) { return x.id < y.id; });
  bool ok = true;
  for (int id = 1; id <= 10; ++id) {
    const auto it = std::find_if(all.begin(), all.end(), [id](const auto& c) { return c.id == id; });
    if (it == all.end()) {
      std::cout << "[FAIL] criterion " << id << ": not run\n";
      ok = false;
      continue;
    }
    std::cout << it->line() << "\n";
    ok = ok && it->pass;
  }
  std::cout << (ok ? "acceptance: all criteria pass" : "acceptance: some criteria fail") << std::endl;
  return ok ? 0 : 1;
}
