#include <algorithm>
#include <limits>

#include "gemm.hpp"
#include "impl.hpp"
#include "vtlab/tensor/ops.hpp"

namespace vtlab {

using detail::dispatch;
using detail::make_result;
using detail::TensorImpl;

std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                                const char* axis_name) {
  if (kernel < 1 || stride < 1 || padding < 0) {
    throw GeometryError(std::string("invalid kernel/stride/padding on axis ") + axis_name);
  }
  if (kernel > in + 2 * padding) {
    throw GeometryError(std::string("kernel extent ") + std::to_string(kernel) + " exceeds padded input extent " +
                        std::to_string(in + 2 * padding) + " on axis " + axis_name);
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace {

struct ConvGeometry {
  std::int64_t N, T, H, W, Cin;
  std::int64_t kt, kh, kw, cin_g, Cout;
  std::int64_t To, Ho, Wo;
  Extent3 stride, padding;
  std::int64_t groups;

  std::int64_t positions() const { return N * To * Ho * Wo; }

  // Input row for output position p at kernel offset (a, b, c), or -1 when in padding.
  std::int64_t input_row(std::int64_t p, std::int64_t a, std::int64_t b, std::int64_t c) const {
    std::int64_t wo = p % Wo;
    std::int64_t rest = p / Wo;
    std::int64_t ho = rest % Ho;
    rest /= Ho;
    std::int64_t to = rest % To;
    std::int64_t n = rest / To;
    const std::int64_t t = to * stride.t - padding.t + a;
    const std::int64_t h = ho * stride.h - padding.h + b;
    const std::int64_t w = wo * stride.w - padding.w + c;
    if (t < 0 || t >= T || h < 0 || h >= H || w < 0 || w >= W) return -1;
    return ((n * T + t) * H + h) * W + w;
  }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const Conv3dOptions& opt) {
  if (x.rank() != 5) throw DimensionError("conv3d: input must be [N,T,H,W,C], got " + shape_str(x.shape()));
  if (w.rank() != 5) throw DimensionError("conv3d: weight must be [kt,kh,kw,Cin/groups,Cout], got " + shape_str(w.shape()));
  ConvGeometry g{};
  g.N = x.dim(0);
  g.T = x.dim(1);
  g.H = x.dim(2);
  g.W = x.dim(3);
  g.Cin = x.dim(4);
  g.kt = w.dim(0);
  g.kh = w.dim(1);
  g.kw = w.dim(2);
  g.cin_g = w.dim(3);
  g.Cout = w.dim(4);
  g.groups = opt.groups;
  g.stride = opt.stride;
  g.padding = opt.padding;
  if (g.groups < 1 || g.Cin % g.groups != 0 || g.Cout % g.groups != 0) {
    throw GeometryError("conv3d: channels (" + std::to_string(g.Cin) + " -> " + std::to_string(g.Cout) +
                        ") not divisible by groups " + std::to_string(g.groups));
  }
  if (g.cin_g != g.Cin / g.groups) {
    throw GeometryError("conv3d: weight expects " + std::to_string(g.cin_g) + " input channels per group, input has " +
                        std::to_string(g.Cin / g.groups));
  }
  g.To = conv_output_extent(g.T, g.kt, g.stride.t, g.padding.t, "t");
  g.Ho = conv_output_extent(g.H, g.kh, g.stride.h, g.padding.h, "h");
  g.Wo = conv_output_extent(g.W, g.kw, g.stride.w, g.padding.w, "w");
  return g;
}

// Dense (groups == 1): one GEMM per kernel offset over gathered input rows.
template <class T>
void dense_forward(const ConvGeometry& g, const T* x, const T* w, T* out) {
  const std::int64_t P = g.positions();
  std::vector<T> col(static_cast<std::size_t>(P * g.Cin));
  std::vector<std::int64_t> rows(static_cast<std::size_t>(P));
  for (std::int64_t a = 0; a < g.kt; ++a)
    for (std::int64_t b = 0; b < g.kh; ++b)
      for (std::int64_t c = 0; c < g.kw; ++c) {
        bool any = false;
        for (std::int64_t p = 0; p < P; ++p) {
          rows[p] = g.input_row(p, a, b, c);
          T* dst = col.data() + p * g.Cin;
          if (rows[p] < 0) {
            std::fill(dst, dst + g.Cin, T(0));
          } else {
            std::copy(x + rows[p] * g.Cin, x + (rows[p] + 1) * g.Cin, dst);
            any = true;
          }
        }
        if (!any) continue;
        const T* wo = w + ((a * g.kh + b) * g.kw + c) * g.Cin * g.Cout;
        detail::gemm_nn(P, g.Cout, g.Cin, col.data(), wo, out);
      }
}

template <class T>
void dense_backward(const ConvGeometry& g, const T* x, const T* w, const T* gout, T* gx, T* gw) {
  const std::int64_t P = g.positions();
  std::vector<T> col(static_cast<std::size_t>(P * g.Cin));
  std::vector<std::int64_t> rows(static_cast<std::size_t>(P));
  for (std::int64_t a = 0; a < g.kt; ++a)
    for (std::int64_t b = 0; b < g.kh; ++b)
      for (std::int64_t c = 0; c < g.kw; ++c) {
        const std::int64_t off = ((a * g.kh + b) * g.kw + c) * g.Cin * g.Cout;
        for (std::int64_t p = 0; p < P; ++p) rows[p] = g.input_row(p, a, b, c);
        if (gw) {
          for (std::int64_t p = 0; p < P; ++p) {
            T* dst = col.data() + p * g.Cin;
            if (rows[p] < 0) {
              std::fill(dst, dst + g.Cin, T(0));
            } else {
              std::copy(x + rows[p] * g.Cin, x + (rows[p] + 1) * g.Cin, dst);
            }
          }
          detail::gemm_tn(g.Cin, g.Cout, P, col.data(), gout, gw + off);
        }
        if (gx) {
          std::fill(col.begin(), col.end(), T(0));
          detail::gemm_nt(P, g.Cin, g.Cout, gout, w + off, col.data());
          for (std::int64_t p = 0; p < P; ++p) {
            if (rows[p] < 0) continue;
            T* dst = gx + rows[p] * g.Cin;
            const T* src = col.data() + p * g.Cin;
            for (std::int64_t ch = 0; ch < g.Cin; ++ch) dst[ch] += src[ch];
          }
        }
      }
}

// Grouped, including depthwise (groups == Cin). Channels of a group are contiguous.
template <class T>
void grouped_forward(const ConvGeometry& g, const T* x, const T* w, T* out) {
  const std::int64_t P = g.positions();
  const std::int64_t cout_g = g.Cout / g.groups;
  const bool depthwise = g.cin_g == 1 && cout_g == 1;
  for (std::int64_t a = 0; a < g.kt; ++a)
    for (std::int64_t b = 0; b < g.kh; ++b)
      for (std::int64_t c = 0; c < g.kw; ++c) {
        const T* wo = w + ((a * g.kh + b) * g.kw + c) * g.cin_g * g.Cout;
        for (std::int64_t p = 0; p < P; ++p) {
          const std::int64_t r = g.input_row(p, a, b, c);
          if (r < 0) continue;
          const T* xr = x + r * g.Cin;
          T* orow = out + p * g.Cout;
          if (depthwise) {
            for (std::int64_t ch = 0; ch < g.Cout; ++ch) orow[ch] += xr[ch] * wo[ch];
            continue;
          }
          for (std::int64_t gr = 0; gr < g.groups; ++gr)
            for (std::int64_t i = 0; i < g.cin_g; ++i) {
              const T xv = xr[gr * g.cin_g + i];
              const T* wrow = wo + i * g.Cout + gr * cout_g;
              for (std::int64_t j = 0; j < cout_g; ++j) orow[gr * cout_g + j] += xv * wrow[j];
            }
        }
      }
}

template <class T>
void grouped_backward(const ConvGeometry& g, const T* x, const T* w, const T* gout, T* gx, T* gw) {
  const std::int64_t P = g.positions();
  const std::int64_t cout_g = g.Cout / g.groups;
  for (std::int64_t a = 0; a < g.kt; ++a)
    for (std::int64_t b = 0; b < g.kh; ++b)
      for (std::int64_t c = 0; c < g.kw; ++c) {
        const std::int64_t off = ((a * g.kh + b) * g.kw + c) * g.cin_g * g.Cout;
        for (std::int64_t p = 0; p < P; ++p) {
          const std::int64_t r = g.input_row(p, a, b, c);
          if (r < 0) continue;
          const T* grow = gout + p * g.Cout;
          for (std::int64_t gr = 0; gr < g.groups; ++gr)
            for (std::int64_t i = 0; i < g.cin_g; ++i) {
              const std::int64_t ci = gr * g.cin_g + i;
              const T* wrow = w + off + i * g.Cout + gr * cout_g;
              T acc = 0;
              for (std::int64_t j = 0; j < cout_g; ++j) {
                acc += grow[gr * cout_g + j] * wrow[j];
                if (gw) gw[off + i * g.Cout + gr * cout_g + j] += x[r * g.Cin + ci] * grow[gr * cout_g + j];
              }
              if (gx) gx[r * g.Cin + ci] += acc;
            }
        }
      }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv3dOptions& options) {
  detail::require_same_dtype(x, weight, "conv3d");
  const ConvGeometry g = conv_geometry(x, weight, options);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != g.Cout)) {
    throw DimensionError("conv3d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(g.Cout) +
                         " output channels");
  }
  std::vector<const Tensor*> inputs{&x, &weight};
  if (has_bias) inputs.push_back(&bias);

  Tensor out = make_result({g.N, g.To, g.Ho, g.Wo, g.Cout}, x.dtype(), "conv3d", inputs, [g, has_bias](TensorImpl& o) {
    auto& ix = *o.grad_fn->inputs[0];
    auto& iw = *o.grad_fn->inputs[1];
    Buffer* gx = ix.grad_target();
    Buffer* gw = iw.grad_target();
    Buffer* gb = has_bias ? o.grad_fn->inputs[2]->grad_target() : nullptr;
    dispatch(o.data.dtype(), [&]<class T>() {
      const T* gout = o.grad->as<const T>().data();
      T* gxp = gx ? gx->as<T>().data() : nullptr;
      T* gwp = gw ? gw->as<T>().data() : nullptr;
      if (gxp || gwp) {
        if (g.groups == 1) {
          dense_backward(g, ix.data.as<const T>().data(), iw.data.as<const T>().data(), gout, gxp, gwp);
        } else {
          grouped_backward(g, ix.data.as<const T>().data(), iw.data.as<const T>().data(), gout, gxp, gwp);
        }
      }
      if (gb) {
        T* gbv = gb->as<T>().data();
        for (std::int64_t p = 0; p < g.positions(); ++p)
          for (std::int64_t ch = 0; ch < g.Cout; ++ch) gbv[ch] += gout[p * g.Cout + ch];
      }
    });
  });

  dispatch(x.dtype(), [&]<class T>() {
    T* ov = out.data<T>().data();
    if (has_bias) {
      detail::require_same_dtype(x, bias, "conv3d");
      const T* bv = bias.data<T>().data();
      for (std::int64_t p = 0; p < g.positions(); ++p) std::copy(bv, bv + g.Cout, ov + p * g.Cout);
    }
    if (g.groups == 1) {
      dense_forward(g, x.data<T>().data(), weight.data<T>().data(), ov);
    } else {
      grouped_forward(g, x.data<T>().data(), weight.data<T>().data(), ov);
    }
  });
  detail::check_finite(out, "conv3d");
  return out;
}

Tensor max_pool3d(const Tensor& x, Extent3 kernel, Extent3 stride, Extent3 padding) {
  if (x.rank() != 5) throw DimensionError("max_pool3d: input must be [N,T,H,W,C], got " + shape_str(x.shape()));
  const std::int64_t N = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  const std::int64_t To = conv_output_extent(T, kernel.t, stride.t, padding.t, "t");
  const std::int64_t Ho = conv_output_extent(H, kernel.h, stride.h, padding.h, "h");
  const std::int64_t Wo = conv_output_extent(W, kernel.w, stride.w, padding.w, "w");
  const std::int64_t P = N * To * Ho * Wo;
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(P * C), -1);

  Tensor out = make_result({N, To, Ho, Wo, C}, x.dtype(), "max_pool3d", {&x}, [argmax](TensorImpl& o) {
    Buffer* gi = o.grad_fn->inputs[0]->grad_target();
    if (!gi) return;
    dispatch(o.data.dtype(), [&]<class Tp>() {
      const Tp* g = o.grad->as<const Tp>().data();
      Tp* gv = gi->as<Tp>().data();
      for (std::size_t i = 0; i < argmax->size(); ++i) gv[(*argmax)[i]] += g[i];
    });
  });

  dispatch(x.dtype(), [&]<class Tp>() {
    const Tp* xv = x.data<Tp>().data();
    Tp* ov = out.data<Tp>().data();
    std::fill(ov, ov + P * C, -std::numeric_limits<Tp>::infinity());
    std::int64_t p = 0;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t to = 0; to < To; ++to)
        for (std::int64_t ho = 0; ho < Ho; ++ho)
          for (std::int64_t wo = 0; wo < Wo; ++wo, ++p)
            for (std::int64_t a = 0; a < kernel.t; ++a)
              for (std::int64_t b = 0; b < kernel.h; ++b)
                for (std::int64_t c = 0; c < kernel.w; ++c) {
                  const std::int64_t t = to * stride.t - padding.t + a;
                  const std::int64_t h = ho * stride.h - padding.h + b;
                  const std::int64_t w = wo * stride.w - padding.w + c;
                  if (t < 0 || t >= T || h < 0 || h >= H || w < 0 || w >= W) continue;
                  const std::int64_t r = (((n * T + t) * H + h) * W + w) * C;
                  for (std::int64_t ch = 0; ch < C; ++ch) {
                    if (xv[r + ch] > ov[p * C + ch]) {
                      ov[p * C + ch] = xv[r + ch];
                      (*argmax)[p * C + ch] = r + ch;
                    }
                  }
                }
  });
  detail::check_finite(out, "max_pool3d");
  return out;
}

}  // namespace vtlab
