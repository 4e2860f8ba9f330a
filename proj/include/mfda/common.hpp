#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mfda {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Error taxonomy. The CLI maps each family to a distinct exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractViolation : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};

struct FilterDivergence : NumericalError {
  FilterDivergence(Index member, const std::string& what)
      : NumericalError(what), member_index(member) {}
  Index member_index;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stream roles so that state noise, observation noise and filter noise of
/// one trajectory never share a generator.
enum class StreamRole : std::uint64_t {
  kInitialCondition = 1,
  kProcessNoise = 2,
  kObservationNoise = 3,
  kFilter = 4,
  kTraining = 5,
  kMisc = 6,
};

/// Seed for the stream identified by (base seed, stream index, role).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                    StreamRole role) {
  return mix64(mix64(base ^ mix64(stream + 0x632be59bd9b4e019ULL)) +
               static_cast<std::uint64_t>(role));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t base, std::uint64_t stream, StreamRole role) {
  return Rng(derive_seed(base, stream, role));
}

inline Vector standard_normal(Index n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

// Worker cap for parallel_for; 0 means hardware concurrency.
inline unsigned& thread_cap() {
  static unsigned cap = 1;
  return cap;
}

inline void set_thread_cap(unsigned n) { thread_cap() = n; }

/// Runs body(i) for i in [0, n). Each index writes only its own output slot,
/// so results do not depend on the worker count.
inline void parallel_for(Index n, const std::function<void(Index)>& body) {
  unsigned workers = thread_cap();
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  if (workers <= 1 || n <= 1) {
    for (Index i = 0; i < n; ++i) body(i);
    return;
  }
  workers = static_cast<unsigned>(std::min<Index>(workers, n));
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (Index i = w; i < n; i += workers) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace mfda
