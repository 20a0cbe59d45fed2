#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace pausenlu {

// splitmix64 finalizer; used to mix seeds when deriving independent streams.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a
inline std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Deterministic RNG on top of mt19937_64 (whose output sequence is fixed by
// the standard). Distribution transforms are implemented here instead of
// std::*_distribution, whose sequences differ across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  // Independent stream keyed by a name (and optional index).
  static Rng derive(std::uint64_t seed, std::string_view stream) {
    return Rng(mix64(seed) ^ hash_str(stream));
  }
  static Rng derive(std::uint64_t seed, std::string_view stream,
                    std::uint64_t index) {
    return Rng(mix64(mix64(seed) ^ hash_str(stream)) + index);
  }

  // Stable sub-seed for handing to components that take a seed themselves.
  static std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                                   std::uint64_t index = 0) {
    return mix64(mix64(mix64(seed) ^ hash_str(stream)) + index);
  }

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n); unbiased via rejection
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t rem = (UINT64_MAX % n + 1) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t x = engine_();
      if (rem == 0 || x <= UINT64_MAX - rem) return x % n;
    }
  }

  // standard normal via Box-Muller (spare value discarded)
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // log-normal parameterized by the mean and sd of the distribution itself
  double lognormal_mean_sd(double mean, double sd) {
    if (mean <= 0.0) return 0.0;
    if (sd <= 0.0) return mean;
    const double sigma2 = std::log(1.0 + (sd * sd) / (mean * mean));
    const double mu = std::log(mean) - 0.5 * sigma2;
    return std::exp(mu + std::sqrt(sigma2) * normal());
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), in draw order
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    if (k > n) k = n;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pausenlu
