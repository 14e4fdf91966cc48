#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "cimnet/tensor.hpp"

namespace cimnet {

// FNV-1a over the bytes of `s`; stable across platforms and builds.
std::uint64_t hash_label(std::string_view s) noexcept;

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Counter-based random stream.
///
/// A stream is keyed by (seed, label). Draw `i` is
/// `mix64(key + (i + 1) * 0x9E3779B97F4A7C15)`, so the value of any draw
/// depends only on (seed, label, i) and never on thread scheduling or on
/// how many other streams exist.
///
/// Gaussian draws use Box-Muller on two consecutive uniforms and
/// consume both (the second variate is discarded).
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view label);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t position() const noexcept { return counter_; }

  // Independent child stream, e.g. child("layer3/window17").
  Rng child(std::string_view sublabel) const;

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  double normal(double mean = 0.0, double sigma = 1.0) noexcept;

 private:
  Rng(std::uint64_t seed, std::uint64_t key) : seed_(seed), key_(key) {}

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

template <typename T>
TensorT<T> seeded_normal(Rng& rng, const Shape& shape, double mean, double sigma);

template <typename T>
TensorT<T> seeded_uniform(Rng& rng, const Shape& shape, double lo, double hi);

}  // namespace cimnet
