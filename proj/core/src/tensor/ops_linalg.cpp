#include <algorithm>

#include "gemm.hpp"
#include "impl.hpp"
#include "vtlab/tensor/ops.hpp"

namespace vtlab {

using detail::dispatch;
using detail::make_result;
using detail::TensorImpl;

Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_same_dtype(a, b, "matmul");
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul: operands need rank >= 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::int64_t M = a.dim(-2);
  const std::int64_t K = a.dim(-1);
  const std::int64_t N = b.dim(-1);
  if (b.dim(-2) != K) {
    throw DimensionError("matmul: inner extents disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const bool a_longer = batch_a.size() >= batch_b.size();
  const Shape& longer = a_longer ? batch_a : batch_b;
  const Shape& shorter = a_longer ? batch_b : batch_a;
  if (!std::equal(shorter.rbegin(), shorter.rend(), longer.rbegin())) {
    throw DimensionError("matmul: batch extents not broadcastable: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::int64_t batches = numel_of(longer);
  const std::int64_t na = numel_of(batch_a);
  const std::int64_t nb = numel_of(batch_b);

  Shape out_shape = longer;
  out_shape.push_back(M);
  out_shape.push_back(N);

  // Batch index i maps to a[i % na] and b[i % nb]; one of them equals `batches`.
  Tensor out = make_result(out_shape, a.dtype(), "matmul", {&a, &b}, [=](TensorImpl& o) {
    auto& ia = *o.grad_fn->inputs[0];
    auto& ib = *o.grad_fn->inputs[1];
    Buffer* ga = ia.grad_target();
    Buffer* gb = ib.grad_target();
    dispatch(o.data.dtype(), [&]<class T>() {
      const T* g = o.grad->as<const T>().data();
      const T* av = ia.data.as<const T>().data();
      const T* bv = ib.data.as<const T>().data();
      for (std::int64_t i = 0; i < batches; ++i) {
        const std::int64_t ai = i % na;
        const std::int64_t bi = i % nb;
        const T* gi = g + i * M * N;
        if (ga) detail::gemm_nt(M, K, N, gi, bv + bi * K * N, ga->as<T>().data() + ai * M * K);
        if (gb) detail::gemm_tn(K, N, M, av + ai * M * K, gi, gb->as<T>().data() + bi * K * N);
      }
    });
  });

  dispatch(a.dtype(), [&]<class T>() {
    const T* av = a.data<T>().data();
    const T* bv = b.data<T>().data();
    T* ov = out.data<T>().data();
    for (std::int64_t i = 0; i < batches; ++i) {
      detail::gemm_nn(M, N, K, av + (i % na) * M * K, bv + (i % nb) * K * N, ov + i * M * N);
    }
  });
  detail::check_finite(out, "matmul");
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require_same_dtype(x, weight, "linear");
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::int64_t in = weight.dim(0);
  const std::int64_t outf = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(outf) +
                         " outputs");
  }
  const std::int64_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outf;

  std::vector<const Tensor*> inputs{&x, &weight};
  if (bias.defined()) inputs.push_back(&bias);
  const bool has_bias = bias.defined();

  Tensor out = make_result(out_shape, x.dtype(), "linear", inputs, [=](TensorImpl& o) {
    auto& ix = *o.grad_fn->inputs[0];
    auto& iw = *o.grad_fn->inputs[1];
    Buffer* gx = ix.grad_target();
    Buffer* gw = iw.grad_target();
    Buffer* gb = has_bias ? o.grad_fn->inputs[2]->grad_target() : nullptr;
    dispatch(o.data.dtype(), [&]<class T>() {
      const T* g = o.grad->as<const T>().data();
      if (gx) detail::gemm_nt(rows, in, outf, g, iw.data.as<const T>().data(), gx->as<T>().data());
      if (gw) detail::gemm_tn(in, outf, rows, ix.data.as<const T>().data(), g, gw->as<T>().data());
      if (gb) {
        T* gbv = gb->as<T>().data();
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* gr = g + r * outf;
          for (std::int64_t j = 0; j < outf; ++j) gbv[j] += gr[j];
        }
      }
    });
  });

  dispatch(x.dtype(), [&]<class T>() {
    T* ov = out.data<T>().data();
    if (has_bias) {
      detail::require_same_dtype(x, bias, "linear");
      const T* bv = bias.data<T>().data();
      for (std::int64_t r = 0; r < rows; ++r) std::copy(bv, bv + outf, ov + r * outf);
    }
    detail::gemm_nn(rows, outf, in, x.data<T>().data(), weight.data<T>().data(), ov);
  });
  detail::check_finite(out, "linear");
  return out;
}

}  // namespace vtlab
