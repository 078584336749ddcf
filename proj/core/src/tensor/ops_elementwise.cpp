#include <algorithm>
#include <cmath>

#include "impl.hpp"
#include "vtlab/tensor/ops.hpp"
#include "vtlab/tensor/rng.hpp"

namespace vtlab {

using detail::dispatch;
using detail::make_result;
using detail::TensorImpl;

namespace {

enum class BinaryKind { Add, Sub, Mul };

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Describes how the smaller operand repeats over the larger one.
struct Broadcast {
  Shape out;
  std::int64_t a_period;  // a is indexed by i % a_period
  std::int64_t b_period;
};

Broadcast plan_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) return {sa, a.numel(), b.numel()};
  if (b.numel() == 1 && sb.size() <= 1) return {sa, a.numel(), 1};
  if (a.numel() == 1 && sa.size() <= 1) return {sb, 1, b.numel()};
  if (is_suffix(sb, sa)) return {sa, a.numel(), b.numel()};
  if (is_suffix(sa, sb)) return {sb, a.numel(), b.numel()};
  throw DimensionError(std::string(op) + ": shapes " + shape_str(sa) + " and " + shape_str(sb) +
                       " are not broadcast-compatible (leading-axis or scalar broadcasting only)");
}

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
  detail::require_same_dtype(a, b, op);
  const Broadcast plan = plan_broadcast(a, b, op);
  const std::int64_t n = numel_of(plan.out);
  const std::int64_t pa = plan.a_period;
  const std::int64_t pb = plan.b_period;

  Tensor out = make_result(plan.out, a.dtype(), op, {&a, &b}, [kind, n, pa, pb](TensorImpl& o) {
    auto& ia = *o.grad_fn->inputs[0];
    auto& ib = *o.grad_fn->inputs[1];
    Buffer* ga = ia.grad_target();
    Buffer* gb = ib.grad_target();
    dispatch(o.data.dtype(), [&]<class T>() {
      auto g = o.grad->as<const T>();
      auto av = ia.data.as<const T>();
      auto bv = ib.data.as<const T>();
      if (ga) {
        auto gav = ga->as<T>();
        for (std::int64_t i = 0; i < n; ++i) {
          T d = g[i];
          if (kind == BinaryKind::Mul) d *= bv[i % pb];
          gav[i % pa] += d;
        }
      }
      if (gb) {
        auto gbv = gb->as<T>();
        for (std::int64_t i = 0; i < n; ++i) {
          T d = g[i];
          if (kind == BinaryKind::Sub) d = -d;
          if (kind == BinaryKind::Mul) d *= av[i % pa];
          gbv[i % pb] += d;
        }
      }
    });
  });

  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>();
    auto bv = b.data<T>();
    auto ov = out.data<T>();
    if (pa == n && pb == n) {
      for (std::int64_t i = 0; i < n; ++i) {
        ov[i] = kind == BinaryKind::Add ? av[i] + bv[i] : (kind == BinaryKind::Sub ? av[i] - bv[i] : av[i] * bv[i]);
      }
    } else {
      for (std::int64_t i = 0; i < n; ++i) {
        const T x = av[i % pa];
        const T y = bv[i % pb];
        ov[i] = kind == BinaryKind::Add ? x + y : (kind == BinaryKind::Sub ? x - y : x * y);
      }
    }
  });
  detail::check_finite(out, op);
  return out;
}

template <class Fwd, class Bwd>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Bwd bwd) {
  Tensor out = make_result(x.shape(), x.dtype(), op, {&x}, [bwd](TensorImpl& o) {
    auto& in = *o.grad_fn->inputs[0];
    Buffer* gi = in.grad_target();
    if (!gi) return;
    dispatch(o.data.dtype(), [&]<class T>() {
      auto g = o.grad->as<const T>();
      auto xv = in.data.as<const T>();
      auto yv = o.data.as<const T>();
      auto gv = gi->as<T>();
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i] * static_cast<T>(bwd(static_cast<double>(xv[i]), static_cast<double>(yv[i])));
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    auto ov = out.data<T>();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = static_cast<T>(fwd(static_cast<double>(xv[i])));
  });
  detail::check_finite(out, op);
  return out;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor dropout(const Tensor& x, double p, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must be in [0, 1)");
  if (p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  const std::int64_t n = x.numel();
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::uint64_t h = splitmix64(hash_combine(seed, static_cast<std::uint64_t>(i)));
    keep[static_cast<std::size_t>(i)] = (static_cast<double>(h >> 11) * 0x1.0p-53) >= p;
  }
  Tensor out = make_result(x.shape(), x.dtype(), "dropout", {&x}, [keep, keep_scale](TensorImpl& o) {
    Buffer* gi = o.grad_fn->inputs[0]->grad_target();
    if (!gi) return;
    dispatch(o.data.dtype(), [&]<class T>() {
      auto g = o.grad->as<const T>();
      auto gv = gi->as<T>();
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += keep[i] ? g[i] * static_cast<T>(keep_scale) : T(0);
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    auto ov = out.data<T>();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = keep[i] ? xv[i] * static_cast<T>(keep_scale) : T(0);
  });
  return out;
}

}  // namespace vtlab
