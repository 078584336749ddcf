#pragma once

// Internal graph representation shared by tensor.cpp and the op kernels.

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vtlab/errors.hpp"
#include "vtlab/tensor/tensor.hpp"

namespace vtlab::detail {

struct TensorImpl {
  Shape shape;
  Buffer data;
  std::optional<Buffer> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  /// Lazily allocated gradient buffer, or nullptr when no gradient flows here.
  Buffer* grad_target() {
    if (!requires_grad) return nullptr;
    if (!grad) grad.emplace(data.dtype(), data.size());
    return &*grad;
  }
};

struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  /// Reads out.grad and accumulates into the inputs' gradients.
  std::function<void(TensorImpl& out)> backward;
};

using BackwardFn = std::function<void(TensorImpl& out)>;

template <class F>
decltype(auto) dispatch(Dtype dtype, F&& f) {
  if (dtype == Dtype::F32) return f.template operator()<float>();
  return f.template operator()<double>();
}

/// Allocates an op result and records the node when any input needs a gradient.
Tensor make_result(const Shape& shape, Dtype dtype, const char* op,
                   std::vector<const Tensor*> inputs, BackwardFn backward);

/// Throws NumericError if `t` holds a NaN or Inf.
void check_finite(const Tensor& t, const char* op);

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op);

inline int normalize_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  }
  return a;
}

}  // namespace vtlab::detail
