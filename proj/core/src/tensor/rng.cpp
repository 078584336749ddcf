#include "vtlab/tensor/rng.hpp"

#include <cmath>
#include <numbers>

namespace vtlab {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) {
  return splitmix64(seed ^ (splitmix64(value) + 0x9E3779B97F4A7C15ULL + (seed << 6) + (seed >> 2)));
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : key_(hash_combine(splitmix64(seed), stream)) {}

std::uint64_t Rng::next_u64() { return hash_combine(key_, counter_++); }

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // Box-Muller; u1 is kept away from zero.
  const double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) return 0;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r < limit) return r % n;
  }
}

namespace {

template <class F>
Tensor fill_with(const Shape& shape, Dtype dtype, F&& draw) {
  Buffer buf(dtype, static_cast<std::size_t>(numel_of(shape)));
  for (std::size_t i = 0; i < buf.size(); ++i) buf.set(i, draw());
  return Tensor::from_buffer(shape, std::move(buf));
}

}  // namespace

Tensor randn(const Shape& shape, Rng& rng, double stddev, Dtype dtype) {
  return fill_with(shape, dtype, [&] { return rng.normal() * stddev; });
}

Tensor rand_uniform(const Shape& shape, Rng& rng, double lo, double hi, Dtype dtype) {
  return fill_with(shape, dtype, [&] { return rng.uniform(lo, hi); });
}

Tensor trunc_normal(const Shape& shape, Rng& rng, double stddev, Dtype dtype) {
  return fill_with(shape, dtype, [&] {
    for (;;) {
      const double z = rng.normal();
      if (std::abs(z) <= 2.0) return z * stddev;
    }
  });
}

}  // namespace vtlab
