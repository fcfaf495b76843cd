#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace nerfmark {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define NM_CHECK(cond, msg)                  \
  do {                                       \
    if (!(cond)) {                           \
      std::ostringstream nm_oss_;            \
      nm_oss_ << msg;                        \
      throw ::nerfmark::Error(nm_oss_.str()); \
    }                                        \
  } while (0)

#define NM_FAIL(msg)                        \
  do {                                      \
    std::ostringstream nm_oss_;             \
    nm_oss_ << msg;                         \
    throw ::nerfmark::Error(nm_oss_.str());  \
  } while (0)

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Off = 3 };

inline std::atomic<int>& log_threshold() {
  static std::atomic<int> level{static_cast<int>(LogLevel::Info)};
  return level;
}

inline void set_log_level(LogLevel l) { log_threshold() = static_cast<int>(l); }

#define NM_LOG(level, tag, msg)                                            \
  do {                                                                     \
    if (static_cast<int>(level) >= ::nerfmark::log_threshold().load()) {   \
      std::ostringstream nm_oss_;                                          \
      nm_oss_ << msg;                                                      \
      std::fprintf(stderr, "[%s] %s\n", tag, nm_oss_.str().c_str());       \
    }                                                                      \
  } while (0)

#define NM_INFO(msg) NM_LOG(::nerfmark::LogLevel::Info, "info", msg)
#define NM_WARN(msg) NM_LOG(::nerfmark::LogLevel::Warn, "warn", msg)

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Deterministic RNG. All distributions are computed with fixed formulas on
// top of mt19937_64 so that identical seeds give identical streams on any
// build (std::*_distribution is implementation-defined and is not used).
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  float uniformf(float lo, float hi) {
    return static_cast<float>(uniform(lo, hi));
  }

  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) {
    NM_CHECK(n > 0, "uniform_int: n must be positive");
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t v;
    do {
      v = eng_();
    } while (v >= limit);
    return static_cast<int64_t>(v % un);
  }

  bool bernoulli(double p = 0.5) { return uniform() < p; }

  // Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }
  float normalf() { return static_cast<float>(normal()); }

  // Independent stream derived from the original seed; unaffected by draws.
  Rng fork(uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream + 1)));
  }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline std::atomic<int>& thread_count() {
  static std::atomic<int> n{static_cast<int>(
      std::max(1u, std::thread::hardware_concurrency()))};
  return n;
}

inline void set_num_threads(int n) { thread_count() = std::max(1, n); }
inline int num_threads() { return thread_count().load(); }

// Static partition of [0, n). Results must be written to disjoint,
// index-addressed slots so the partitioning never affects numerics.
template <class F>
void parallel_for(int64_t n, F&& fn) {
  int nt = std::min<int64_t>(num_threads(), n);
  if (nt <= 1) {
    if (n > 0) fn(int64_t{0}, n);
    return;
  }
  std::vector<std::thread> workers;
  std::exception_ptr err;
  std::mutex err_mu;
  int64_t chunk = (n + nt - 1) / nt;
  for (int t = 0; t < nt; ++t) {
    int64_t lo = t * chunk;
    int64_t hi = std::min<int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([&, lo, hi] {
      try {
        fn(lo, hi);
      } catch (...) {
        std::lock_guard<std::mutex> g(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  if (err) std::rethrow_exception(err);
}

inline double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace nerfmark
