#pragma once

// Benchmark systems: ground-truth trajectory generation, observation
// operators and noisy datasets.

#include "mfda/common.hpp"
#include "mfda/linalg.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

namespace mfda {

struct PendulumParams {
  double g = 9.8;
  double length = 20.0;
  double sigma1_sq = 0.002;  // variance of the angular-velocity noise
  double sigma2_sq = 0.002;  // variance of the angle noise
  // false: sigma * xi per step; true: sigma * sqrt(dt) * xi (Brownian increment)
  bool sqrt_dt_noise = false;

  double noise_scale(double dt) const { return sqrt_dt_noise ? std::sqrt(dt) : 1.0; }
};

struct TriadParams {
  double omega = 0.75;
  double gamma = 0.5;
  double beta = 1.0;
  double a = 1.0;
  double sigma = 1.0 / std::numbers::sqrt2;
};

struct Lorenz63Params {
  double a = 10.0;
  double b = 8.0 / 3.0;
  double r = 28.0;
  std::array<double, 3> noise{0.05, 0.05, 0.05};
};

struct AllenCahnParams {
  double epsilon = 1e-4;
  double theta = 5.0;
  Index grid_points = 100;
  double noise = 0.0;  // optional additive process noise per step
};

enum class ModelKind { kPendulum, kTriad, kLorenz63, kAllenCahn };

inline std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kPendulum: return "pendulum";
    case ModelKind::kTriad: return "triad";
    case ModelKind::kLorenz63: return "lorenz63";
    case ModelKind::kAllenCahn: return "allen_cahn";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Single-step integrators.

/// Euler-Maruyama step of the noisy pendulum; state = (omega, phi).
inline Vector step_pendulum(const Vector& state, const PendulumParams& p,
                            double dt, const Vector& noise_draw) {
  const double omega = state[0];
  const double phi = state[1];
  const double s = p.noise_scale(dt);
  Vector next(2);
  next[0] = omega - dt * (p.g / p.length) * std::sin(phi) +
            s * std::sqrt(p.sigma1_sq) * noise_draw[0];
  next[1] = phi + dt * omega + s * std::sqrt(p.sigma2_sq) * noise_draw[1];
  return next;
}

inline Vector triad_drift(const Vector& x, const TriadParams& p) {
  const double u = x[0], v = x[1], w = x[2];
  Vector f(3);
  f[0] = p.omega * v;
  f[1] = -2.0 * p.omega * u - p.beta * w - p.gamma * v + p.a * u * w;
  f[2] = p.beta * v - p.gamma * w - p.a * u * v;
  return f;
}

/// Euler-Maruyama step of the triad model; noise enters v and w only.
inline Vector step_triad(const Vector& state, const TriadParams& p, double dt,
                         const Vector& noise_draw) {
  Vector next = state + dt * triad_drift(state, p);
  const double scale = p.sigma * std::sqrt(dt);
  next[1] += scale * noise_draw[0];
  next[2] += scale * noise_draw[1];
  return next;
}

/// Drift of the shifted Lorenz 63 system (v3 = z - (r + a)).
inline Vector lorenz63_drift(const Vector& v, const Lorenz63Params& p) {
  Vector f(3);
  f[0] = p.a * (v[1] - v[0]);
  f[1] = -p.a * v[0] - v[1] - v[0] * v[2];
  f[2] = v[0] * v[1] - p.b * v[2] - p.b * (p.r + p.a);
  return f;
}

inline Vector step_lorenz63(const Vector& state, const Lorenz63Params& p,
                            double dt, const Vector& noise_draw) {
  Vector next = state + dt * lorenz63_drift(state, p);
  const double s = std::sqrt(dt);
  for (int i = 0; i < 3; ++i) next[i] += p.noise[i] * s * noise_draw[i];
  return next;
}

/// Solves the periodic tridiagonal system with constant stencil
/// (-off, diag, -off) by Sherman-Morrison on top of the Thomas algorithm.
inline Vector solve_periodic_tridiagonal(double diag, double off,
                                         const Vector& rhs) {
  const Index n = rhs.size();
  require(n >= 3, "periodic tridiagonal system needs at least 3 unknowns");
  // A = T + u v^T with T tridiagonal (modified corners).
  const double a = -off, c = -off;  // sub/super diagonal entries
  const double gamma = -diag;
  Vector b = Vector::Constant(n, diag);
  b[0] = diag - gamma;
  b[n - 1] = diag - a * c / gamma;

  auto thomas = [&](const Vector& d) {
    Vector cp(n), dp(n), x(n);
    if (b[0] == 0.0) throw ConfigError("singular periodic tridiagonal system");
    cp[0] = c / b[0];
    dp[0] = d[0] / b[0];
    for (Index i = 1; i < n; ++i) {
      const double m = b[i] - a * cp[i - 1];
      if (m == 0.0 || !std::isfinite(m))
        throw ConfigError("singular periodic tridiagonal system");
      cp[i] = c / m;
      dp[i] = (d[i] - a * dp[i - 1]) / m;
    }
    x[n - 1] = dp[n - 1];
    for (Index i = n - 2; i >= 0; --i) x[i] = dp[i] - cp[i] * x[i + 1];
    return x;
  };

  Vector u = Vector::Zero(n);
  u[0] = gamma;
  u[n - 1] = a;
  Vector y = thomas(rhs);
  Vector q = thomas(u);
  const double vy = y[0] + c / gamma * y[n - 1];
  const double vq = q[0] + c / gamma * q[n - 1];
  if (1.0 + vq == 0.0) throw ConfigError("singular periodic tridiagonal system");
  return y - (vy / (1.0 + vq)) * q;
}

/// Periodic grid on [-1, 1) with spacing 2 / points.
inline Vector allen_cahn_grid(Index points) {
  Vector x(points);
  const double dx = 2.0 / static_cast<double>(points);
  for (Index j = 0; j < points; ++j) x[j] = -1.0 + dx * static_cast<double>(j);
  return x;
}

/// Crank-Nicolson diffusion, explicit reaction:
/// (I - dt/2 eps L) u' = (I + dt/2 eps L) u - dt theta (u^3 - u).
inline Vector step_allen_cahn(const Vector& field, const AllenCahnParams& p,
                              double dt) {
  const Index n = field.size();
  const double dx = 2.0 / static_cast<double>(n);
  const double c = 0.5 * dt * p.epsilon / (dx * dx);
  Vector rhs(n);
  for (Index j = 0; j < n; ++j) {
    const double left = field[(j + n - 1) % n];
    const double right = field[(j + 1) % n];
    const double u = field[j];
    rhs[j] = u + c * (left - 2.0 * u + right) - dt * p.theta * (u * u * u - u);
  }
  if (c == 0.0) return rhs;
  return solve_periodic_tridiagonal(1.0 + 2.0 * c, c, rhs);
}

// ---------------------------------------------------------------------------

using ModelParams =
    std::variant<PendulumParams, TriadParams, Lorenz63Params, AllenCahnParams>;

struct ModelSpec {
  ModelParams params;
  double dt = 0.05;

  ModelKind kind() const { return static_cast<ModelKind>(params.index()); }

  Index state_dim() const {
    switch (kind()) {
      case ModelKind::kPendulum: return 2;
      case ModelKind::kTriad: return 3;
      case ModelKind::kLorenz63: return 3;
      case ModelKind::kAllenCahn:
        return std::get<AllenCahnParams>(params).grid_points;
    }
    return 0;
  }

  /// Dimension of the per-step Gaussian draw consumed by step().
  Index noise_dim() const {
    switch (kind()) {
      case ModelKind::kPendulum: return 2;
      case ModelKind::kTriad: return 2;
      case ModelKind::kLorenz63: return 3;
      case ModelKind::kAllenCahn: return state_dim();
    }
    return 0;
  }

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("model dt must be positive");
    std::visit(
        [](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, PendulumParams>) {
            if (p.sigma1_sq < 0 || p.sigma2_sq < 0)
              throw ConfigError("pendulum noise variances must be >= 0");
            if (!(p.length > 0)) throw ConfigError("pendulum length must be > 0");
          } else if constexpr (std::is_same_v<P, TriadParams>) {
            if (p.sigma < 0) throw ConfigError("triad sigma must be >= 0");
          } else if constexpr (std::is_same_v<P, Lorenz63Params>) {
            for (double g : p.noise)
              if (g < 0) throw ConfigError("lorenz63 noise must be >= 0");
          } else {
            if (p.noise < 0) throw ConfigError("allen_cahn noise must be >= 0");
            if (p.grid_points < 3)
              throw ConfigError("allen_cahn grid needs at least 3 points");
          }
        },
        params);
  }

  /// Deterministic drift step plus the scaled noise draw.
  Vector step(const Vector& x, const Vector& noise_draw) const {
    switch (kind()) {
      case ModelKind::kPendulum:
        return step_pendulum(x, std::get<PendulumParams>(params), dt, noise_draw);
      case ModelKind::kTriad:
        return step_triad(x, std::get<TriadParams>(params), dt, noise_draw);
      case ModelKind::kLorenz63:
        return step_lorenz63(x, std::get<Lorenz63Params>(params), dt, noise_draw);
      case ModelKind::kAllenCahn: {
        const auto& p = std::get<AllenCahnParams>(params);
        Vector next = step_allen_cahn(x, p, dt);
        if (p.noise > 0.0) next += p.noise * noise_draw;
        return next;
      }
    }
    return x;
  }

  Vector step(const Vector& x, Rng& rng) const {
    return step(x, standard_normal(noise_dim(), rng));
  }

  /// Covariance of the additive per-step model error in state coordinates.
  Matrix process_covariance() const {
    const Index n = state_dim();
    Matrix q = Matrix::Zero(n, n);
    switch (kind()) {
      case ModelKind::kPendulum: {
        const auto& p = std::get<PendulumParams>(params);
        const double s2 = p.noise_scale(dt) * p.noise_scale(dt);
        q(0, 0) = s2 * p.sigma1_sq;
        q(1, 1) = s2 * p.sigma2_sq;
        break;
      }
      case ModelKind::kTriad: {
        const auto& p = std::get<TriadParams>(params);
        q(1, 1) = q(2, 2) = p.sigma * p.sigma * dt;
        break;
      }
      case ModelKind::kLorenz63: {
        const auto& p = std::get<Lorenz63Params>(params);
        for (int i = 0; i < 3; ++i) q(i, i) = p.noise[i] * p.noise[i] * dt;
        break;
      }
      case ModelKind::kAllenCahn: {
        const auto& p = std::get<AllenCahnParams>(params);
        q.diagonal().setConstant(p.noise * p.noise);
        break;
      }
    }
    return q;
  }
};

// ---------------------------------------------------------------------------
// Observation operators. All supported kinds are linear: y = H x + eta.

enum class ObservationKind { kSelector, kMatrix, kSum };

struct ObservationSpec {
  ObservationKind kind = ObservationKind::kSelector;
  Matrix h;  // m x n
  Matrix noise_cov;  // R, m x m
  std::vector<Index> selection;  // only for kSelector

  Index observation_dim() const { return h.rows(); }
  Index state_dim() const { return h.cols(); }

  static ObservationSpec selector(Index n, std::vector<Index> indices,
                                  const Matrix& r) {
    ObservationSpec s;
    s.kind = ObservationKind::kSelector;
    s.h = Matrix::Zero(static_cast<Index>(indices.size()), n);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      require(indices[i] >= 0 && indices[i] < n, "selector index out of range");
      s.h(static_cast<Index>(i), indices[i]) = 1.0;
    }
    s.selection = std::move(indices);
    s.noise_cov = r;
    s.validate();
    return s;
  }

  static ObservationSpec identity(Index n, const Matrix& r) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    return selector(n, std::move(idx), r);
  }

  static ObservationSpec sum_of_components(Index n, double r) {
    ObservationSpec s;
    s.kind = ObservationKind::kSum;
    s.h = Matrix::Ones(1, n);
    s.noise_cov = Matrix::Constant(1, 1, r);
    s.validate();
    return s;
  }

  static ObservationSpec linear(const Matrix& h, const Matrix& r) {
    ObservationSpec s;
    s.kind = ObservationKind::kMatrix;
    s.h = h;
    s.noise_cov = r;
    s.validate();
    return s;
  }

  void validate() const {
    if (h.rows() < 1 || h.cols() < 1) throw ConfigError("empty observation operator");
    if (!h.allFinite()) throw ConfigError("observation operator has non-finite entries");
    if (noise_cov.rows() != h.rows() || noise_cov.cols() != h.rows())
      throw ConfigError("observation noise covariance must be m x m");
    if ((noise_cov - noise_cov.transpose()).cwiseAbs().maxCoeff() >
        1e-12 * (1.0 + noise_cov.cwiseAbs().maxCoeff()))
      throw ConfigError("observation noise covariance must be symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(noise_cov);
    if (eig.eigenvalues().minCoeff() < -1e-12)
      throw ConfigError("observation noise covariance must be PSD");
  }
};

/// y = h(x) + noise_draw.
inline Vector observe(const Vector& x, const ObservationSpec& spec,
                      const Vector& noise_draw) {
  require(x.size() == spec.state_dim(), "observe: state dimension mismatch");
  require(noise_draw.size() == spec.observation_dim(),
          "observe: noise dimension mismatch");
  return spec.h * x + noise_draw;
}

// ---------------------------------------------------------------------------
// Initial conditions and datasets.

struct InitialConditionSampler {
  Vector mean;    // Gaussian mean (pendulum, triad, lorenz63 seed point)
  Vector stddev;  // per-component standard deviation
  int spinup_steps = 0;  // lorenz63: steps discarded to reach the attractor
  // allen_cahn: g(x) = x^2 cos(pi x) + sum_j c_j cos(j pi x), c_j ~ N(0, s^2)
  double perturbation = 0.0;
  int perturbation_modes = 3;

  Vector sample(const ModelSpec& model, Rng& rng) const {
    const Index n = model.state_dim();
    if (model.kind() == ModelKind::kAllenCahn) {
      const Vector x = allen_cahn_grid(n);
      Vector u(n);
      for (Index j = 0; j < n; ++j)
        u[j] = x[j] * x[j] * std::cos(std::numbers::pi * x[j]);
      if (perturbation > 0.0) {
        std::normal_distribution<double> dist(0.0, perturbation);
        for (int mode = 0; mode <= perturbation_modes; ++mode) {
          const double c = dist(rng);
          for (Index j = 0; j < n; ++j)
            u[j] += c * std::cos(mode * std::numbers::pi * x[j]);
        }
      }
      return u;
    }
    Vector x0 = mean.size() == n ? mean : Vector::Zero(n);
    if (stddev.size() == n) {
      std::normal_distribution<double> dist(0.0, 1.0);
      for (Index i = 0; i < n; ++i) x0[i] += stddev[i] * dist(rng);
    }
    for (int s = 0; s < spinup_steps; ++s) x0 = model.step(x0, rng);
    return x0;
  }
};

struct Trajectory {
  Matrix states;        // T x n
  Matrix observations;  // T x m
  Index length() const { return states.rows(); }
};

struct TrajectorySet {
  std::vector<Trajectory> trajectories;
  std::uint64_t seed = 0;

  Index size() const { return static_cast<Index>(trajectories.size()); }
  Index length() const { return trajectories.empty() ? 0 : trajectories[0].length(); }
  Index state_dim() const { return trajectories.empty() ? 0 : trajectories[0].states.cols(); }
  Index observation_dim() const {
    return trajectories.empty() ? 0 : trajectories[0].observations.cols();
  }
};

/// Simulates one trajectory of length T; `stream` selects independent noise
/// streams so trajectories do not depend on each other.
inline Trajectory simulate_trajectory(const ModelSpec& model,
                                      const ObservationSpec& obs, Index length,
                                      const InitialConditionSampler& sampler,
                                      std::uint64_t seed, std::uint64_t stream) {
  Rng ic_rng = make_rng(seed, stream, StreamRole::kInitialCondition);
  Rng process_rng = make_rng(seed, stream, StreamRole::kProcessNoise);
  Rng obs_rng = make_rng(seed, stream, StreamRole::kObservationNoise);
  const Matrix obs_sqrt = psd_sqrt(obs.noise_cov);
  const Index m = obs.observation_dim();

  Trajectory traj;
  traj.states.resize(length, model.state_dim());
  traj.observations.resize(length, m);
  Vector x = sampler.sample(model, ic_rng);
  for (Index k = 0; k < length; ++k) {
    if (k > 0) x = model.step(x, process_rng);
    if (!x.allFinite())
      throw NumericalError("trajectory " + std::to_string(stream) + " diverged at step " +
                           std::to_string(k));
    traj.states.row(k) = x.transpose();
    const Vector eta = obs_sqrt * standard_normal(m, obs_rng);
    traj.observations.row(k) = observe(x, obs, eta).transpose();
  }
  return traj;
}

inline TrajectorySet generate_dataset(const ModelSpec& model,
                                      const ObservationSpec& obs, Index count,
                                      Index length,
                                      const InitialConditionSampler& sampler,
                                      std::uint64_t seed) {
  model.validate();
  if (count < 1) throw ConfigError("dataset needs at least one trajectory");
  if (length < 2) throw ConfigError("trajectory length must be >= 2");
  if (obs.state_dim() != model.state_dim())
    throw ConfigError("observation operator does not match model state dimension");
  TrajectorySet set;
  set.seed = seed;
  set.trajectories.resize(static_cast<std::size_t>(count));
  parallel_for(count, [&](Index i) {
    set.trajectories[static_cast<std::size_t>(i)] = simulate_trajectory(
        model, obs, length, sampler, seed, static_cast<std::uint64_t>(i));
  });
  return set;
}

}  // namespace mfda
