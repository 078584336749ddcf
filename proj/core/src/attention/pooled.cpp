#include "vtlab/attention/attention.hpp"
#include "vtlab/errors.hpp"

namespace vtlab {

namespace {

constexpr const char* kAxis[3] = {"t", "h", "w"};

bool is_unit(Extent3 s) { return s.t == 1 && s.h == 1 && s.w == 1; }

}  // namespace

std::vector<Extent3> pooled_coords(Extent3 pooled, Extent3 stride) {
  std::vector<Extent3> coords;
  coords.reserve(static_cast<std::size_t>(pooled.volume()));
  for (std::int64_t t = 0; t < pooled.t; ++t)
    for (std::int64_t h = 0; h < pooled.h; ++h)
      for (std::int64_t w = 0; w < pooled.w; ++w) coords.push_back({t * stride.t, h * stride.h, w * stride.w});
  return coords;
}

Tensor decomposed_relpos_bias(std::span<const Extent3> q_coords, std::span<const Extent3> kv_coords,
                              const DecomposedRelPos& tables) {
  const Tensor* per_axis[3] = {&tables.t, &tables.h, &tables.w};
  std::int64_t heads = -1;
  for (int a = 0; a < 3; ++a) {
    const Tensor& tb = *per_axis[a];
    if (tb.rank() != 2 || tb.dim(0) != 2 * tables.extent[a] - 1) {
      throw DimensionError(std::string("decomposed_relpos_bias: table for axis ") + kAxis[a] + " must have " +
                           std::to_string(2 * tables.extent[a] - 1) + " rows, got " + shape_str(tb.shape()));
    }
    if (heads >= 0 && tb.dim(1) != heads) throw DimensionError("decomposed_relpos_bias: tables disagree on head count");
    heads = tb.dim(1);
  }
  const auto Lq = static_cast<std::int64_t>(q_coords.size());
  const auto Lk = static_cast<std::int64_t>(kv_coords.size());
  Tensor total;
  for (int a = 0; a < 3; ++a) {
    const std::int64_t rows = 2 * tables.extent[a] - 1;
    std::vector<std::int64_t> index(static_cast<std::size_t>(Lq * Lk));
    std::size_t k = 0;
    for (const Extent3& q : q_coords)
      for (const Extent3& kv : kv_coords) {
        const std::int64_t d = kv[a] - q[a] + tables.extent[a] - 1;
        if (d < 0 || d >= rows) {
          throw IndexError(std::string("decomposed_relpos_bias: offset ") + std::to_string(kv[a] - q[a]) +
                           " on axis " + kAxis[a] + " outside table of extent " + std::to_string(tables.extent[a]));
        }
        index[k++] = d;
      }
    Tensor part = gather(*per_axis[a], 0, index);
    total = total.defined() ? add(total, part) : part;
  }
  return permute(reshape(total, {Lq, Lk, heads}), {2, 0, 1});
}

Extent3 pooled_extent(Extent3 grid, Extent3 stride, Extent3 kernel) {
  Extent3 out = grid;
  if (is_unit(stride)) return out;
  for (int a = 0; a < 3; ++a) {
    if (stride[a] > grid[a]) {
      throw GeometryError(std::string("pool stride ") + std::to_string(stride[a]) + " exceeds grid extent " +
                          std::to_string(grid[a]) + " on axis " + kAxis[a]);
    }
    out[a] = conv_output_extent(grid[a], kernel[a], stride[a], kernel[a] / 2, kAxis[a]);
  }
  return out;
}

TokenGrid pool_tokens(const TokenGrid& grid, Extent3 stride, Extent3 kernel, const PoolParams* params) {
  validate_grid(grid);
  if (is_unit(stride)) return grid;
  pooled_extent(grid.extents(), stride, kernel);
  if (!params) throw ConfigError("pool_tokens: stride " + stride.str() + " requires pooling parameters");
  Conv3dOptions opt{stride, {kernel.t / 2, kernel.h / 2, kernel.w / 2}, grid.channels()};
  Tensor y = conv3d(grid.tokens, params->weight, {}, opt);
  return {apply(params->norm, y), grid.patch, {0, 0, 0}};
}

TokenGrid pool_skip(const TokenGrid& grid, Extent3 stride) {
  validate_grid(grid);
  if (is_unit(stride)) return grid;
  Extent3 kernel;
  Extent3 padding;
  for (int a = 0; a < 3; ++a) {
    kernel[a] = stride[a] > 1 ? stride[a] + 1 : 1;
    padding[a] = kernel[a] / 2;
  }
  return {max_pool3d(grid.tokens, kernel, stride, padding), grid.patch, {0, 0, 0}};
}

TokenGrid pooled_attention(const TokenGrid& grid, Extent3 q_stride, Extent3 kv_stride,
                           const PooledAttentionParams& params, AttentionProbe* probe) {
  validate_grid(grid);
  const std::int64_t N = grid.batch();
  Tensor qkv = apply(params.attn.qkv, grid.tokens);
  const std::int64_t d = qkv.dim(-1) / 3;
  auto part = [&](std::int64_t i) { return TokenGrid{slice(qkv, 4, i * d, (i + 1) * d), grid.patch, {0, 0, 0}}; };
  auto ptr = [](const std::optional<PoolParams>& p) { return p ? &*p : nullptr; };
  TokenGrid q = pool_tokens(part(0), q_stride, params.kernel, ptr(params.pool_q));
  TokenGrid k = pool_tokens(part(1), kv_stride, params.kernel, ptr(params.pool_k));
  TokenGrid v = pool_tokens(part(2), kv_stride, params.kernel, ptr(params.pool_v));
  const Extent3 eq = q.extents();
  const Extent3 ek = k.extents();

  Tensor bias;
  if (params.relpos) {
    const auto qc = pooled_coords(eq, q_stride);
    const auto kc = pooled_coords(ek, kv_stride);
    bias = decomposed_relpos_bias(qc, kc, *params.relpos);
  }
  Tensor out = multi_head_attention(reshape(q.tokens, {N, eq.volume(), d}), reshape(k.tokens, {N, ek.volume(), d}),
                                    reshape(v.tokens, {N, ek.volume(), d}), params.attn.heads, bias,
                                    &params.attn.proj, probe);
  return {reshape(out, {N, eq.t, eq.h, eq.w, out.dim(-1)}), grid.patch, {0, 0, 0}};
}

TokenGrid local_mhra(const TokenGrid& grid, Extent3 kernel, const LocalMhraParams& params) {
  validate_grid(grid);
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] < 1 || kernel[a] % 2 == 0) {
      throw ConfigError("local_mhra: kernel " + kernel.str() + " must have odd extents");
    }
  }
  const Tensor& w = params.dw_weight;
  if (w.rank() != 5 || w.dim(0) != kernel.t || w.dim(1) != kernel.h || w.dim(2) != kernel.w) {
    throw DimensionError("local_mhra: depthwise weight " + shape_str(w.shape()) + " does not match kernel " +
                         kernel.str());
  }
  Tensor v = apply(params.value, grid.tokens);
  Conv3dOptions opt{{1, 1, 1}, {kernel.t / 2, kernel.h / 2, kernel.w / 2}, v.dim(-1)};
  Tensor agg = conv3d(v, w, params.dw_bias, opt);
  return {apply(params.proj, agg), grid.patch, grid.pad};
}

}  // namespace vtlab
