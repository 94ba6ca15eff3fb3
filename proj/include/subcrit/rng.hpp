#pragma once

// Counter-keyed splittable random streams.
//
// Every Monte Carlo routine in this library derives one stream per logical
// unit of work (a replica, a quadrature node, ...) from a (root seed,
// stream name, index) key.  Streams never share state, so the amount of
// randomness one replica consumes cannot shift the values another replica
// sees.  Together with block-ordered reduction (parallel.hpp) this makes
// every estimate a pure function of the root seed, independent of worker
// count and scheduling.

#include <cmath>
#include <cstdint>
#include <string_view>

namespace subcrit {

// splitmix64 output finalizer (Steele, Lea, Flood; public-domain constants).
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// FNV-1a, used to fold stream names into the key.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Inverse of the standard normal CDF.  Acklam's rational approximation
// refined with one Halley step against std::erfc; good to ~1e-15 on (0,1).
inline double inverse_normal_cdf(double u) {
  static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                  -2.759285104469687e+02, 1.383577518672690e+02,
                                  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                  -1.556989798598866e+02, 6.680131188771972e+01,
                                  -1.328068155288572e+01};
  static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                  -2.400758277161838e+00, -2.549732539343734e+00,
                                  4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                  2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double lo = 0.02425;
  double x;
  if (u < lo) {
    const double q = std::sqrt(-2.0 * std::log(u));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (u <= 1.0 - lo) {
    const double q = u - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - u));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Halley refinement: e = Phi(x) - u.
  const double e = 0.5 * std::erfc(-x / 1.4142135623730951) - u;
  const double f = e * 2.5066282746310002 * std::exp(0.5 * x * x);
  return x - f / (1.0 + 0.5 * x * f);
}

// A splitmix64 sequence whose starting state is a hash of
// (seed, name, index).  Cheap to construct; construct one per replica.
class RandomStream {
 public:
  RandomStream() : state_(0x853c49e6748fea9bULL) {}
  explicit RandomStream(std::uint64_t raw_state) : state_(raw_state) {}

  static RandomStream from_key(std::uint64_t seed, std::string_view name,
                               std::uint64_t index = 0) {
    std::uint64_t s = mix64(seed + 0x9E3779B97F4A7C15ULL);
    s = mix64(s ^ fnv1a(name));
    s = mix64(s ^ (index * 0xD1B54A32D192ED03ULL + 0x2545F4914F6CDD1DULL));
    return RandomStream(s);
  }

  // Derive a sub-stream without disturbing this stream's counter.
  RandomStream split(std::string_view name, std::uint64_t index = 0) const {
    return from_key(state_, name, index);
  }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix64(state_);
  }

  // Uniform on [0,1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on the open interval (0,1); safe for log() and inverse CDFs.
  double next_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Standard normal via inverse CDF; consumes exactly one uniform.
  double normal() { return inverse_normal_cdf(next_open()); }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(next_double() * static_cast<double>(n)) % n;
  }

 private:
  std::uint64_t state_;
};

}  // namespace subcrit
