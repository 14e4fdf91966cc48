#include "cimnet/rng.hpp"

#include <cmath>
#include <numbers>

namespace cimnet {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t hash_label(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::string_view label)
    : seed_(seed), key_(mix64(mix64(seed) ^ hash_label(label))) {}

Rng Rng::child(std::string_view sublabel) const {
  return Rng(seed_, mix64(key_ ^ hash_label(sublabel)));
}

std::uint64_t Rng::next_u64() noexcept {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double Rng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  // Lemire-style rejection keeps the draw unbiased.
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

double Rng::normal(double mean, double sigma) noexcept {
  // u1 in (0, 1] so log(u1) is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return mean + sigma * z;
}

template <typename T>
TensorT<T> seeded_normal(Rng& rng, const Shape& shape, double mean, double sigma) {
  TensorT<T> out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(sigma == 0.0 ? mean : rng.normal(mean, sigma));
  }
  return out;
}

template <typename T>
TensorT<T> seeded_uniform(Rng& rng, const Shape& shape, double lo, double hi) {
  TensorT<T> out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(rng.uniform(lo, hi));
  return out;
}

template TensorT<float> seeded_normal(Rng&, const Shape&, double, double);
template TensorT<double> seeded_normal(Rng&, const Shape&, double, double);
template TensorT<float> seeded_uniform(Rng&, const Shape&, double, double);
template TensorT<double> seeded_uniform(Rng&, const Shape&, double, double);

}  // namespace cimnet
