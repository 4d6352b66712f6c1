#pragma once

#include <cmath>
#include <cstdint>

namespace chauffeur {

// splitmix64; used to derive independent stream seeds from (seed, index) pairs.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  return splitmix64(mix_seed(a, b) ^ splitmix64(c));
}

// Counter-based generator with explicit algorithms for every draw, so streams
// are reproducible irrespective of the standard library.
struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed) : state(seed) {}

  uint64_t next() { return splitmix64(state++); }

  // Uniform on (0, 1]; never returns 0 so log() is safe.
  double uniform() { return (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53; }

  // Box-Muller without the cached spare (two uniforms per draw).
  double normal() {
    double u1 = uniform(), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Standard normal rejected outside +-2, then scaled.
  double trunc_normal(double sigma) {
    double z;
    do {
      z = normal();
    } while (std::abs(z) > 2.0);
    return z * sigma;
  }

  // Marsaglia-Tsang; valid for shape > 1/3, we only use shape > 1.
  double gamma(double shape) {
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  double beta(double alpha, double beta_) {
    double ga = gamma(alpha), gb = gamma(beta_);
    return ga / (ga + gb);
  }
};

}  // namespace chauffeur
