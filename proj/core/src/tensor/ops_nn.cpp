#include <algorithm>
#include <cmath>
#include <limits>

#include "impl.hpp"
#include "vtlab/tensor/ops.hpp"

namespace vtlab {

using detail::dispatch;
using detail::make_result;
using detail::TensorImpl;

Tensor softmax(const Tensor& x, int axis) {
  const int a = detail::normalize_axis(axis, x.rank(), "softmax");
  std::int64_t outer = 1;
  std::int64_t inner = 1;
  for (int i = 0; i < a; ++i) outer *= x.dim(i);
  for (int i = a + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::int64_t len = x.dim(a);

  Tensor out = make_result(x.shape(), x.dtype(), "softmax", {&x}, [outer, len, inner](TensorImpl& o) {
    Buffer* gi = o.grad_fn->inputs[0]->grad_target();
    if (!gi) return;
    dispatch(o.data.dtype(), [&]<class T>() {
      const T* y = o.data.as<const T>().data();
      const T* g = o.grad->as<const T>().data();
      T* gx = gi->as<T>().data();
      for (std::int64_t p = 0; p < outer; ++p) {
        for (std::int64_t q = 0; q < inner; ++q) {
          const std::int64_t base = p * len * inner + q;
          T dot = 0;
          for (std::int64_t l = 0; l < len; ++l) dot += y[base + l * inner] * g[base + l * inner];
          for (std::int64_t l = 0; l < len; ++l) {
            const std::int64_t i = base + l * inner;
            gx[i] += y[i] * (g[i] - dot);
          }
        }
      }
    });
  });

  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* y = out.data<T>().data();
    for (std::int64_t p = 0; p < outer; ++p) {
      for (std::int64_t q = 0; q < inner; ++q) {
        const std::int64_t base = p * len * inner + q;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::int64_t l = 0; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
        T total = 0;
        for (std::int64_t l = 0; l < len; ++l) {
          const T e = std::exp(xv[base + l * inner] - mx);
          y[base + l * inner] = e;
          total += e;
        }
        const T inv = T(1) / total;
        for (std::int64_t l = 0; l < len; ++l) y[base + l * inner] *= inv;
      }
    }
  });
  detail::check_finite(out, "softmax");
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  detail::require_same_dtype(x, gamma, "layer_norm");
  detail::require_same_dtype(x, beta, "layer_norm");
  const std::int64_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d || gamma.rank() != 1 || beta.rank() != 1) {
    throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
                         " must match last axis of " + shape_str(x.shape()));
  }
  const std::int64_t rows = x.numel() / d;
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));

  Tensor out = make_result(x.shape(), x.dtype(), "layer_norm", {&x, &gamma, &beta}, [rows, d, rstd, eps](TensorImpl& o) {
    auto& ix = *o.grad_fn->inputs[0];
    auto& ig = *o.grad_fn->inputs[1];
    Buffer* gx = ix.grad_target();
    Buffer* gg = ig.grad_target();
    Buffer* gb = o.grad_fn->inputs[2]->grad_target();
    (void)eps;
    dispatch(o.data.dtype(), [&]<class T>() {
      const T* xv = ix.data.as<const T>().data();
      const T* gam = ig.data.as<const T>().data();
      const T* g = o.grad->as<const T>().data();
      std::vector<double> xhat(static_cast<std::size_t>(d));
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = xv + r * d;
        const T* gr = g + r * d;
        double mu = 0;
        for (std::int64_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        const double rs = (*rstd)[static_cast<std::size_t>(r)];
        double mean_dxhat = 0;
        double mean_dxhat_xhat = 0;
        for (std::int64_t j = 0; j < d; ++j) {
          xhat[j] = (xr[j] - mu) * rs;
          const double dxh = static_cast<double>(gr[j]) * gam[j];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xhat[j];
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        if (gx) {
          T* gxr = gx->as<T>().data() + r * d;
          for (std::int64_t j = 0; j < d; ++j) {
            const double dxh = static_cast<double>(gr[j]) * gam[j];
            gxr[j] += static_cast<T>(rs * (dxh - mean_dxhat - xhat[j] * mean_dxhat_xhat));
          }
        }
        if (gg) {
          T* ggv = gg->as<T>().data();
          for (std::int64_t j = 0; j < d; ++j) ggv[j] += static_cast<T>(gr[j] * xhat[j]);
        }
        if (gb) {
          T* gbv = gb->as<T>().data();
          for (std::int64_t j = 0; j < d; ++j) gbv[j] += gr[j];
        }
      }
    });
  });

  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    const T* gam = gamma.data<T>().data();
    const T* bet = beta.data<T>().data();
    T* y = out.data<T>().data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* xr = xv + r * d;
      double mu = 0;
      for (std::int64_t j = 0; j < d; ++j) mu += xr[j];
      mu /= static_cast<double>(d);
      double var = 0;
      for (std::int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= static_cast<double>(d);
      const double rs = 1.0 / std::sqrt(var + eps);
      (*rstd)[static_cast<std::size_t>(r)] = rs;
      T* yr = y + r * d;
      for (std::int64_t j = 0; j < d; ++j) yr[j] = static_cast<T>((xr[j] - mu) * rs * gam[j] + bet[j]);
    }
  });
  detail::check_finite(out, "layer_norm");
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [B, C], got " + shape_str(logits.shape()));
  const std::int64_t B = logits.dim(0);
  const std::int64_t C = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(B));
  }
  for (int l : labels) {
    if (l < 0 || l >= C) throw IndexError("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(C) + ")");
  }
  const std::vector<int> lab(labels.begin(), labels.end());
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B * C));

  Tensor out = make_result({}, logits.dtype(), "cross_entropy", {&logits}, [B, C, lab, probs](TensorImpl& o) {
    Buffer* gi = o.grad_fn->inputs[0]->grad_target();
    if (!gi) return;
    dispatch(o.data.dtype(), [&]<class T>() {
      const double g = o.grad->as<const T>()[0] / static_cast<double>(B);
      T* gv = gi->as<T>().data();
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
          const double target = (c == lab[b]) ? 1.0 : 0.0;
          gv[b * C + c] += static_cast<T>(g * ((*probs)[b * C + c] - target));
        }
      }
    });
  });

  dispatch(logits.dtype(), [&]<class T>() {
    const T* z = logits.data<T>().data();
    double loss = 0;
    for (std::int64_t b = 0; b < B; ++b) {
      const T* zr = z + b * C;
      double mx = zr[0];
      for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(zr[c]));
      double total = 0;
      for (std::int64_t c = 0; c < C; ++c) total += std::exp(zr[c] - mx);
      const double log_total = std::log(total) + mx;
      for (std::int64_t c = 0; c < C; ++c) (*probs)[b * C + c] = std::exp(zr[c] - log_total);
      loss += log_total - zr[lab[b]];
    }
    out.data<T>()[0] = static_cast<T>(loss / static_cast<double>(B));
  });
  detail::check_finite(out, "cross_entropy");
  return out;
}

}  // namespace vtlab
