#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

#include "frailnet/errors.hpp"

namespace frailnet {

namespace detail {

// SplitMix64 finalizer. Bijective on 64-bit words.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

/**
 * Counter-based SplitMix64 generator.
 *
 * Output i of stream s is mix64(s + i*GAMMA), so the sequence is reproducible on
 * any platform from (seed, path) alone. Independent streams are derived by
 * folding path components into the stream key with the same finalizer; streams
 * with different paths never share state. All samplers consume a fixed number
 * of outputs per call, so insertion of new draws upstream never shifts draws
 * in a sibling stream.
 */
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) : state_(detail::mix64(seed ^ 0x5851f42d4c957f2dull)) {}

  /** Derive the seed of an independent substream from a master seed and a path. */
  static std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = detail::mix64(master ^ 0x8000000000000001ull);
    for (std::uint64_t p : path) s = detail::mix64(s ^ detail::mix64(p + 0x9e3779b97f4a7c15ull));
    return s;
  }

  static Rng stream(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    return Rng(derive_seed(master, path));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return detail::mix64(state_);
  }

  // URBG interface, usable with <random> distributions where convenient.
  static constexpr std::uint64_t min() { return 0; }
  static constexpr std::uint64_t max() { return std::numeric_limits<std::uint64_t>::max(); }
  std::uint64_t operator()() { return next_u64(); }

  /** Uniform on [0, 1) with 53-bit resolution. */
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /** Uniform on (0, 1); never returns an exact endpoint. */
  double uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  /** Standard normal via Box-Muller. Consumes exactly two outputs, no cache. */
  double normal() {
    double u1 = uniform_open();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  /** Exponential with the given rate, by inversion. */
  double exponential(double rate) {
    if (!(rate > 0.0)) throw InvalidArgumentError("exponential rate must be positive");
    return -std::log(uniform_open()) / rate;
  }

  /**
   * Gamma(shape, scale) by Marsaglia-Tsang squeeze; shapes below one are boosted
   * through Gamma(shape+1) * U^{1/shape}.
   */
  double gamma(double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0))
      throw InvalidArgumentError("gamma shape and scale must be positive");
    if (shape < 1.0) {
      double boost = std::pow(uniform_open(), 1.0 / shape);
      return gamma(shape + 1.0, scale) * boost;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = uniform_open();
      double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return scale * d * v;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return scale * d * v;
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace frailnet
