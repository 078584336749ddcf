#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vtlab/tensor/extent.hpp"
#include "vtlab/tensor/tensor.hpp"

namespace vtlab {

// Broadcasting is restricted to two forms: one operand's shape is a suffix of
// the other's (repeated over the leading axes), or one operand has a single
// element. Anything else is a DimensionError.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

/// [..., m, k] x [..., k, n] -> [..., m, n]; batch axes broadcast by suffix.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x[..., in] * weight[in, out] + bias[out]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);

/// exp(x - max) / sum along `axis`.
Tensor softmax(const Tensor& x, int axis);

/// Normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// At most one extent may be -1.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const int> order);
Tensor permute(const Tensor& x, std::initializer_list<int> order);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis);

/// Selects entries of `axis` by index (index_select semantics).
Tensor gather(const Tensor& x, int axis, std::span<const std::int64_t> indices);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
/// Half-open range [start, end) of `axis`.
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t end);
/// Cyclic shift: element i moves to (i + shift) mod n.
Tensor roll(const Tensor& x, int axis, std::int64_t shift);
/// Zero padding along one axis.
Tensor pad(const Tensor& x, int axis, std::int64_t before, std::int64_t after);

struct Conv3dOptions {
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};
  std::int64_t groups = 1;
};

/// Cross-correlation of x[N,T,H,W,Cin] with weight[kt,kh,kw,Cin/groups,Cout].
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv3dOptions& options = {});

/// Output extent of a strided window along one axis; throws GeometryError when empty.
std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                std::int64_t padding, const char* axis_name);

/// Max pooling of x[N,T,H,W,C]; padded positions never win.
Tensor max_pool3d(const Tensor& x, Extent3 kernel, Extent3 stride, Extent3 padding);

/// Mean negative log-likelihood of integer labels under softmax(logits[B, C]).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Inverted dropout with a mask that is a pure function of `seed`.
Tensor dropout(const Tensor& x, double p, std::uint64_t seed);

}  // namespace vtlab
