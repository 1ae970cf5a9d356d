#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ltx {

// Deterministic counter-based generator (SplitMix64).
//
// The i-th raw output is mix64(seed + i * 0x9E3779B97F4A7C15), where mix64 is
// the SplitMix64 finalizer. Integer-only state and IEEE-exact scaling make the
// uniform stream bit-identical for a given seed on every platform. Derived
// streams (`child`) hash the parent seed with a label and two integers, so
// per-image / per-tensor streams never overlap by construction.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    return mix64(state_);
  }

  // Uniform in [0, 1), 53-bit resolution; exact (no libm involved).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n > 0. Multiply-shift reduction.
  uint64_t uniform_int(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; two values per pair of draws.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    // u1 in (0, 1] so log() is finite.
    const double u1 =
        static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(t);
    have_cached_ = true;
    return r * std::cos(t);
  }

  // Independent derived stream keyed by (seed, label, a, b).
  Rng child(std::string_view label, uint64_t a = 0, uint64_t b = 0) const {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the label bytes
    for (unsigned char c : label) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    h = mix64(h ^ mix64(state_));
    h = mix64(h ^ mix64(a ^ 0x517cc1b727220a95ull));
    h = mix64(h ^ mix64(b ^ 0x2545F4914F6CDD1Dull));
    return Rng(h);
  }

  uint64_t seed() const { return state_; }

 private:
  static uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace ltx
