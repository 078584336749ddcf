#include <algorithm>
#include <cstring>
#include <numeric>

#include "impl.hpp"
#include "vtlab/tensor/ops.hpp"

namespace vtlab {

using detail::dispatch;
using detail::make_result;
using detail::TensorImpl;

namespace {

struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t len = 1;
  std::int64_t inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.len = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Copies `src` into `dst` (same length), or accumulates when `acc` is true.
template <class T>
void copy_or_add(T* dst, const T* src, std::int64_t n, bool acc) {
  if (acc) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
  } else {
    std::memcpy(dst, src, static_cast<std::size_t>(n) * sizeof(T));
  }
}

}  // namespace

Tensor reshape(const Tensor& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape: more than one inferred extent");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0 && x.numel() % known == 0) shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out = make_result(shape, x.dtype(), "reshape", {&x}, [](TensorImpl& o) {
    Buffer* gi = o.grad_fn->inputs[0]->grad_target();
    if (!gi) return;
    dispatch(o.data.dtype(), [&]<class T>() {
      auto g = o.grad->as<const T>();
      copy_or_add(gi->as<T>().data(), g.data(), static_cast<std::int64_t>(g.size()), true);
    });
  });
  out.buffer() = x.buffer();
  return out;
}

namespace {

// Visits every output element of a permutation, passing (out_index, in_index).
template <class F>
void for_each_permuted(const Shape& in_shape, std::span<const int> order, F&& f) {
  const int rank = static_cast<int>(in_shape.size());
  std::vector<std::int64_t> in_stride(static_cast<std::size_t>(rank), 1);
  for (int i = rank - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * in_shape[i + 1];
  std::vector<std::int64_t> out_shape(static_cast<std::size_t>(rank));
  std::vector<std::int64_t> step(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[order[i]];
    step[i] = in_stride[order[i]];
  }
  const std::int64_t n = numel_of(in_shape);
  // Innermost output axis is walked in a tight loop.
  const std::int64_t last_len = out_shape[rank - 1];
  const std::int64_t last_step = step[rank - 1];
  std::vector<std::int64_t> counter(static_cast<std::size_t>(rank), 0);
  std::int64_t in_base = 0;
  for (std::int64_t o = 0; o < n; o += last_len) {
    for (std::int64_t j = 0; j < last_len; ++j) f(o + j, in_base + j * last_step);
    for (int ax = rank - 2; ax >= 0; --ax) {
      if (++counter[ax] < out_shape[ax]) {
        in_base += step[ax];
        break;
      }
      in_base -= step[ax] * (out_shape[ax] - 1);
      counter[ax] = 0;
    }
  }
}

}  // namespace

Tensor permute(const Tensor& x, std::span<const int> order) {
  const int rank = x.rank();
  if (static_cast<int>(order.size()) != rank) {
    throw DimensionError("permute: order has " + std::to_string(order.size()) + " axes for rank " +
                         std::to_string(rank));
  }
  std::vector<int> seen(static_cast<std::size_t>(rank), 0);
  Shape out_shape(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    if (order[i] < 0 || order[i] >= rank || seen[order[i]]++) throw DimensionError("permute: invalid axis order");
    out_shape[i] = x.shape()[order[i]];
  }
  const Shape in_shape = x.shape();
  const std::vector<int> ord(order.begin(), order.end());
  Tensor out = make_result(out_shape, x.dtype(), "permute", {&x}, [in_shape, ord](TensorImpl& o) {
    Buffer* gi = o.grad_fn->inputs[0]->grad_target();
    if (!gi) return;
    dispatch(o.data.dtype(), [&]<class T>() {
      const T* g = o.grad->as<const T>().data();
      T* gv = gi->as<T>().data();
      for_each_permuted(in_shape, ord, [&](std::int64_t oi, std::int64_t ii) { gv[ii] += g[oi]; });
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* ov = out.data<T>().data();
    for_each_permuted(in_shape, ord, [&](std::int64_t oi, std::int64_t ii) { ov[oi] = xv[ii]; });
  });
  return out;
}

Tensor permute(const Tensor& x, std::initializer_list<int> order) {
  return permute(x, std::span<const int>(order.begin(), order.size()));
}

Tensor sum(const Tensor& x) {
  Tensor out = make_result({}, x.dtype(), "sum", {&x}, [](TensorImpl& o) {
    Buffer* gi = o.grad_fn->inputs[0]->grad_target();
    if (!gi) return;
    dispatch(o.data.dtype(), [&]<class T>() {
      const T g = o.grad->as<const T>()[0];
      for (T& v : gi->as<T>()) v += g;
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    double acc = 0;
    for (T v : x.data<T>()) acc += v;
    out.data<T>()[0] = static_cast<T>(acc);
  });
  detail::check_finite(out, "sum");
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum(const Tensor& x, int axis) {
  const int a = detail::normalize_axis(axis, x.rank(), "sum");
  const AxisSplit s = split_at(x.shape(), a);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + a);
  Tensor out = make_result(out_shape, x.dtype(), "sum_axis", {&x}, [s](TensorImpl& o) {
    Buffer* gi = o.grad_fn->inputs[0]->grad_target();
    if (!gi) return;
    dispatch(o.data.dtype(), [&]<class T>() {
      const T* g = o.grad->as<const T>().data();
      T* gv = gi->as<T>().data();
      for (std::int64_t p = 0; p < s.outer; ++p)
        for (std::int64_t l = 0; l < s.len; ++l)
          for (std::int64_t q = 0; q < s.inner; ++q) gv[(p * s.len + l) * s.inner + q] += g[p * s.inner + q];
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* ov = out.data<T>().data();
    for (std::int64_t p = 0; p < s.outer; ++p)
      for (std::int64_t l = 0; l < s.len; ++l)
        for (std::int64_t q = 0; q < s.inner; ++q) ov[p * s.inner + q] += xv[(p * s.len + l) * s.inner + q];
  });
  detail::check_finite(out, "sum");
  return out;
}

Tensor mean(const Tensor& x, int axis) {
  const int a = detail::normalize_axis(axis, x.rank(), "mean");
  return scale(sum(x, a), 1.0 / static_cast<double>(x.dim(a)));
}

Tensor gather(const Tensor& x, int axis, std::span<const std::int64_t> indices) {
  const int a = detail::normalize_axis(axis, x.rank(), "gather");
  const AxisSplit s = split_at(x.shape(), a);
  for (auto i : indices) {
    if (i < 0 || i >= s.len) {
      throw IndexError("gather: index " + std::to_string(i) + " out of range for extent " + std::to_string(s.len));
    }
  }
  if (indices.empty()) throw DimensionError("gather: empty index list");
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(a)] = static_cast<std::int64_t>(indices.size());
  const std::vector<std::int64_t> idx(indices.begin(), indices.end());
  const auto m = static_cast<std::int64_t>(idx.size());
  Tensor out = make_result(out_shape, x.dtype(), "gather", {&x}, [s, idx, m](TensorImpl& o) {
    Buffer* gi = o.grad_fn->inputs[0]->grad_target();
    if (!gi) return;
    dispatch(o.data.dtype(), [&]<class T>() {
      const T* g = o.grad->as<const T>().data();
      T* gv = gi->as<T>().data();
      for (std::int64_t p = 0; p < s.outer; ++p)
        for (std::int64_t j = 0; j < m; ++j)
          copy_or_add(gv + (p * s.len + idx[j]) * s.inner, g + (p * m + j) * s.inner, s.inner, true);
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* ov = out.data<T>().data();
    for (std::int64_t p = 0; p < s.outer; ++p)
      for (std::int64_t j = 0; j < m; ++j)
        copy_or_add(ov + (p * m + j) * s.inner, xv + (p * s.len + idx[j]) * s.inner, s.inner, false);
  });
  return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const int a = detail::normalize_axis(axis, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  std::int64_t total = 0;
  std::vector<std::int64_t> lens;
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) {
    detail::require_same_dtype(parts[0], p, "concat");
    Shape probe = p.shape();
    if (probe.size() != out_shape.size()) throw DimensionError("concat: rank mismatch");
    probe[static_cast<std::size_t>(a)] = out_shape[static_cast<std::size_t>(a)];
    if (probe != out_shape) {
      throw DimensionError("concat: " + shape_str(p.shape()) + " incompatible with " + shape_str(parts[0].shape()));
    }
    lens.push_back(p.dim(a));
    total += p.dim(a);
    inputs.push_back(&p);
  }
  out_shape[static_cast<std::size_t>(a)] = total;
  const AxisSplit s = split_at(out_shape, a);
  Tensor out = make_result(out_shape, parts[0].dtype(), "concat", inputs, [s, lens](TensorImpl& o) {
    dispatch(o.data.dtype(), [&]<class T>() {
      const T* g = o.grad->as<const T>().data();
      std::int64_t offset = 0;
      for (std::size_t k = 0; k < lens.size(); ++k) {
        Buffer* gi = o.grad_fn->inputs[k]->grad_target();
        if (gi) {
          T* gv = gi->as<T>().data();
          for (std::int64_t p = 0; p < s.outer; ++p)
            copy_or_add(gv + p * lens[k] * s.inner, g + (p * s.len + offset) * s.inner, lens[k] * s.inner, true);
        }
        offset += lens[k];
      }
    });
  });
  dispatch(out.dtype(), [&]<class T>() {
    T* ov = out.data<T>().data();
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const T* pv = parts[k].data<T>().data();
      for (std::int64_t p = 0; p < s.outer; ++p)
        copy_or_add(ov + (p * s.len + offset) * s.inner, pv + p * lens[k] * s.inner, lens[k] * s.inner, false);
      offset += lens[k];
    }
  });
  return out;
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t end) {
  const int a = detail::normalize_axis(axis, x.rank(), "slice");
  const AxisSplit s = split_at(x.shape(), a);
  if (start < 0 || end > s.len || start >= end) {
    throw IndexError("slice: range [" + std::to_string(start) + ", " + std::to_string(end) + ") invalid for extent " +
                     std::to_string(s.len));
  }
  const std::int64_t m = end - start;
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(a)] = m;
  Tensor out = make_result(out_shape, x.dtype(), "slice", {&x}, [s, m, start](TensorImpl& o) {
    Buffer* gi = o.grad_fn->inputs[0]->grad_target();
    if (!gi) return;
    dispatch(o.data.dtype(), [&]<class T>() {
      const T* g = o.grad->as<const T>().data();
      T* gv = gi->as<T>().data();
      for (std::int64_t p = 0; p < s.outer; ++p)
        copy_or_add(gv + (p * s.len + start) * s.inner, g + p * m * s.inner, m * s.inner, true);
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* ov = out.data<T>().data();
    for (std::int64_t p = 0; p < s.outer; ++p)
      copy_or_add(ov + p * m * s.inner, xv + (p * s.len + start) * s.inner, m * s.inner, false);
  });
  return out;
}

Tensor roll(const Tensor& x, int axis, std::int64_t shift) {
  const int a = detail::normalize_axis(axis, x.rank(), "roll");
  const AxisSplit s = split_at(x.shape(), a);
  const std::int64_t k = ((shift % s.len) + s.len) % s.len;
  if (k == 0) return x;
  // out[(i + k) mod n] = in[i]
  auto move = [s, k]<class T>(T* dst, const T* src, bool acc, bool forward) {
    for (std::int64_t p = 0; p < s.outer; ++p) {
      for (std::int64_t i = 0; i < s.len; ++i) {
        const std::int64_t j = (i + k) % s.len;
        const std::int64_t from = forward ? i : j;
        const std::int64_t to = forward ? j : i;
        copy_or_add(dst + (p * s.len + to) * s.inner, src + (p * s.len + from) * s.inner, s.inner, acc);
      }
    }
  };
  Tensor out = make_result(x.shape(), x.dtype(), "roll", {&x}, [move](TensorImpl& o) {
    Buffer* gi = o.grad_fn->inputs[0]->grad_target();
    if (!gi) return;
    dispatch(o.data.dtype(), [&]<class T>() {
      move.template operator()<T>(gi->as<T>().data(), o.grad->as<const T>().data(), true, false);
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    move.template operator()<T>(out.data<T>().data(), x.data<T>().data(), false, true);
  });
  return out;
}

Tensor pad(const Tensor& x, int axis, std::int64_t before, std::int64_t after) {
  if (before < 0 || after < 0) throw DimensionError("pad: negative padding");
  if (before == 0 && after == 0) return x;
  const int a = detail::normalize_axis(axis, x.rank(), "pad");
  const AxisSplit s = split_at(x.shape(), a);
  const std::int64_t m = s.len + before + after;
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(a)] = m;
  Tensor out = make_result(out_shape, x.dtype(), "pad", {&x}, [s, m, before](TensorImpl& o) {
    Buffer* gi = o.grad_fn->inputs[0]->grad_target();
    if (!gi) return;
    dispatch(o.data.dtype(), [&]<class T>() {
      const T* g = o.grad->as<const T>().data();
      T* gv = gi->as<T>().data();
      for (std::int64_t p = 0; p < s.outer; ++p)
        copy_or_add(gv + p * s.len * s.inner, g + (p * m + before) * s.inner, s.len * s.inner, true);
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* ov = out.data<T>().data();
    for (std::int64_t p = 0; p < s.outer; ++p)
      copy_or_add(ov + (p * m + before) * s.inner, xv + p * s.len * s.inner, s.len * s.inner, false);
  });
  return out;
}

}  // namespace vtlab
