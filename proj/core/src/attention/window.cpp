#include <vector>

#include "vtlab/attention/attention.hpp"
#include "vtlab/errors.hpp"

namespace vtlab {

namespace {

constexpr const char* kAxis[3] = {"t", "h", "w"};

void require_divisible(Extent3 grid, Extent3 window) {
  for (int a = 0; a < 3; ++a) {
    if (window[a] < 1 || grid[a] % window[a] != 0) {
      throw GeometryError(std::string("grid extent ") + std::to_string(grid[a]) + " on axis " + kAxis[a] +
                          " is not divisible by window extent " + std::to_string(window[a]));
    }
  }
}

}  // namespace

Tensor window_partition(const Tensor& tokens, Extent3 window) {
  if (tokens.rank() != 5) throw DimensionError("window_partition: expected [N, T, H, W, D], got " + shape_str(tokens.shape()));
  const Extent3 g{tokens.dim(1), tokens.dim(2), tokens.dim(3)};
  require_divisible(g, window);
  const std::int64_t N = tokens.dim(0), D = tokens.dim(4);
  Tensor x = reshape(tokens, {N, g.t / window.t, window.t, g.h / window.h, window.h, g.w / window.w, window.w, D});
  x = permute(x, {0, 1, 3, 5, 2, 4, 6, 7});
  const std::int64_t nw = (g.t / window.t) * (g.h / window.h) * (g.w / window.w);
  return reshape(x, {N * nw, window.volume(), D});
}

Tensor window_partition(const TokenGrid& grid, const WindowSpec& spec) {
  validate_grid(grid);
  return window_partition(grid.tokens, spec.window);
}

Tensor window_reverse(const Tensor& windows, Extent3 window, std::int64_t batch, Extent3 grid) {
  require_divisible(grid, window);
  const std::int64_t D = windows.dim(-1);
  const Extent3 n{grid.t / window.t, grid.h / window.h, grid.w / window.w};
  if (windows.rank() != 3 || windows.dim(0) != batch * n.volume() || windows.dim(1) != window.volume()) {
    throw DimensionError("window_reverse: " + shape_str(windows.shape()) + " does not tile grid " + grid.str() +
                         " with window " + window.str());
  }
  Tensor x = reshape(windows, {batch, n.t, n.h, n.w, window.t, window.h, window.w, D});
  x = permute(x, {0, 1, 4, 2, 5, 3, 6, 7});
  return reshape(x, {batch, grid.t, grid.h, grid.w, D});
}

std::optional<AttentionMask> build_window_mask(Extent3 grid, Extent3 valid, const WindowSpec& spec, Dtype dtype) {
  require_divisible(grid, spec.window);
  if (!spec.shifted() && grid == valid) return std::nullopt;

  // Region label of each position of the rolled grid; padded tokens get -1.
  std::vector<int> label(static_cast<std::size_t>(grid.volume()));
  std::size_t idx = 0;
  for (std::int64_t t = 0; t < grid.t; ++t)
    for (std::int64_t h = 0; h < grid.h; ++h)
      for (std::int64_t w = 0; w < grid.w; ++w, ++idx) {
        const std::int64_t pos[3] = {t, h, w};
        int code = 0;
        bool padded = false;
        for (int a = 0; a < 3; ++a) {
          const std::int64_t G = grid[a], W = spec.window[a], S = spec.shift[a];
          const std::int64_t original = (pos[a] + S) % G;
          if (original >= valid[a]) padded = true;
          int region = 0;
          if (S != 0) region = pos[a] < G - W ? 0 : (pos[a] < G - S ? 1 : 2);
          code = code * 3 + region;
        }
        label[idx] = padded ? -1 : code;
      }

  const Extent3 n{grid.t / spec.window.t, grid.h / spec.window.h, grid.w / spec.window.w};
  const std::int64_t L = spec.window.volume();
  const std::int64_t nw = n.volume();
  const double blocked = mask_value(dtype);
  std::vector<double> values(static_cast<std::size_t>(nw * L * L), 0.0);
  std::vector<int> local(static_cast<std::size_t>(L));
  std::int64_t win = 0;
  for (std::int64_t bt = 0; bt < n.t; ++bt)
    for (std::int64_t bh = 0; bh < n.h; ++bh)
      for (std::int64_t bw = 0; bw < n.w; ++bw, ++win) {
        std::int64_t i = 0;
        for (std::int64_t t = 0; t < spec.window.t; ++t)
          for (std::int64_t h = 0; h < spec.window.h; ++h)
            for (std::int64_t w = 0; w < spec.window.w; ++w, ++i) {
              const std::int64_t gt = bt * spec.window.t + t, gh = bh * spec.window.h + h, gw = bw * spec.window.w + w;
              local[i] = label[(gt * grid.h + gh) * grid.w + gw];
            }
        double* m = values.data() + win * L * L;
        for (std::int64_t a = 0; a < L; ++a)
          for (std::int64_t b = 0; b < L; ++b)
            if (local[a] != local[b]) m[a * L + b] = blocked;
      }
  return AttentionMask{Tensor::from_values({nw, L, L}, values, dtype)};
}

AttentionMask build_shift_mask(Extent3 grid, const WindowSpec& spec) {
  if (!spec.shifted()) throw ContractError("build_shift_mask: zero shift needs no mask");
  return *build_window_mask(grid, grid, spec);
}

TokenGrid pad_to_window(const TokenGrid& grid, Extent3 window) {
  validate_grid(grid);
  TokenGrid out = grid;
  const Extent3 e = grid.extents();
  for (int a = 0; a < 3; ++a) {
    const std::int64_t extra = (window[a] - e[a] % window[a]) % window[a];
    if (extra == 0) continue;
    out.tokens = pad(out.tokens, a + 1, 0, extra);
    out.pad[a] += extra;
  }
  return out;
}

TokenGrid crop_padding(const TokenGrid& grid) {
  TokenGrid out = grid;
  const Extent3 e = grid.extents();
  for (int a = 0; a < 3; ++a) {
    if (grid.pad[a] == 0) continue;
    out.tokens = slice(out.tokens, a + 1, 0, e[a] - grid.pad[a]);
    out.pad[a] = 0;
  }
  return out;
}

TokenGrid shifted_window_attention(const TokenGrid& grid, const WindowSpec& spec, const RelPosBiasTable* table,
                                   const AttentionParams& params, AttentionProbe* probe) {
  validate_grid(grid);
  validate_window(spec);
  const Extent3 valid = grid.extents();
  TokenGrid work = pad_to_window(TokenGrid{grid.tokens, grid.patch, {0, 0, 0}}, spec.window);
  const Extent3 padded = work.extents();
  const std::int64_t N = grid.batch();

  Tensor x = work.tokens;
  for (int a = 0; a < 3; ++a) x = roll(x, a + 1, -spec.shift[a]);

  Tensor windows = window_partition(x, spec.window);
  Tensor qkv = apply(params.qkv, windows);
  const std::int64_t d = qkv.dim(-1) / 3;
  const std::int64_t L = spec.window.volume();

  Tensor bias;
  if (table) bias = relpos_bias(*table, spec.window);
  if (auto mask = build_window_mask(padded, valid, spec, x.dtype())) {
    // Expand [nw, L, L] over heads so it can carry the relative bias.
    const std::int64_t nw = mask->windows();
    Buffer expanded(x.dtype(), static_cast<std::size_t>(nw * params.heads * L * L));
    for (std::int64_t w = 0; w < nw; ++w)
      for (std::int64_t h = 0; h < params.heads; ++h)
        for (std::int64_t i = 0; i < L * L; ++i)
          expanded.set(static_cast<std::size_t>((w * params.heads + h) * L * L + i), mask->values.value(w * L * L + i));
    Tensor m = Tensor::from_buffer({nw, params.heads, L, L}, std::move(expanded));
    bias = bias.defined() ? add(m, bias) : m;
  }

  Tensor out = multi_head_attention(slice(qkv, 2, 0, d), slice(qkv, 2, d, 2 * d), slice(qkv, 2, 2 * d, 3 * d),
                                    params.heads, bias, &params.proj, probe);
  Tensor y = window_reverse(out, spec.window, N, padded);
  for (int a = 0; a < 3; ++a) y = roll(y, a + 1, spec.shift[a]);
  TokenGrid result{y, grid.patch, work.pad};
  result = crop_padding(result);
  result.pad = grid.pad;
  return result;
}

}  // namespace vtlab
