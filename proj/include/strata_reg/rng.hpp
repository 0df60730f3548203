#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace strata_reg {

// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);

// Deterministic child seed from a base seed and a list of tags
// (method index, budget, trial index, ...).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

/// Explicit per-caller random stream, passed by reference to every sampler.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal (Box-Muller, no cached second variate).
  double normal();

  /// Standard normal conditioned on |z| <= bound.
  double truncated_normal(double bound);

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Child stream keyed by tag; does not advance this stream.
  Rng split(std::uint64_t tag) const { return Rng(derive_seed(seed_, {tag})); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace strata_reg
