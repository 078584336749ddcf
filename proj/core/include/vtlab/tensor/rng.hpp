#pragma once

#include <cstdint>

#include "vtlab/tensor/tensor.hpp"

namespace vtlab {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value);

/// Counter-based generator: the n-th draw is a pure function of (seed, stream, n).
///
/// Distributions are implemented here rather than with <random> so streams
/// are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0, Dtype dtype = default_dtype());
Tensor rand_uniform(const Shape& shape, Rng& rng, double lo, double hi,
                    Dtype dtype = default_dtype());
/// Truncated normal clipped at two standard deviations.
Tensor trunc_normal(const Shape& shape, Rng& rng, double stddev, Dtype dtype = default_dtype());

}  // namespace vtlab
