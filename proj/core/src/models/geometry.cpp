#include "geometry.hpp"

#include "vtlab/errors.hpp"
#include "vtlab/tensor/ops.hpp"

namespace vtlab::detail {

namespace {

constexpr const char* kAxis[3] = {"t", "h", "w"};

Extent3 checked(Extent3 in, Extent3 kernel, Extent3 stride, Extent3 padding) {
  Extent3 out;
  for (int a = 0; a < 3; ++a) out[a] = conv_output_extent(in[a], kernel[a], stride[a], padding[a], kAxis[a]);
  return out;
}

bool unit(Extent3 s) { return s == Extent3{1, 1, 1}; }

}  // namespace

ModelGeometry trace_geometry(const ModelConfig& c, Extent3 input) {
  ModelGeometry g;
  if (c.family == Family::Linear) {
    g.embed = g.stem = input;
    return g;
  }
  g.embed = checked(input, c.resolved_embed_kernel(), c.patch_size, c.embed_padding);
  g.stem = c.stem_pool ? checked(g.embed, c.stem_pool->kernel, c.stem_pool->stride, c.stem_pool->padding) : g.embed;
  Extent3 grid = g.stem;
  std::int64_t dim = c.resolved_embed_dim();
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    const StageSpec& s = c.stages[i];
    StageGeometry sg;
    for (int b = 0; b < s.depth; ++b) {
      BlockGeometry bg;
      bg.in = grid;
      bg.dim_in = dim;
      bg.dim_out = s.dim;
      bg.out = grid;
      if (s.kind == AttentionKind::PooledAttention) {
        const PoolSpec& p = *s.pool_strides;
        bg.q_stride = b == 0 ? p.q_stride : Extent3{1, 1, 1};
        bg.kv_stride = p.kv_stride;
        const Extent3 pad{p.kernel.t / 2, p.kernel.h / 2, p.kernel.w / 2};
        for (int a = 0; a < 3; ++a) {
          if (bg.q_stride[a] > grid[a] || bg.kv_stride[a] > grid[a]) {
            throw GeometryError("stage " + std::to_string(i) + ": pool stride exceeds grid extent on axis " + kAxis[a]);
          }
        }
        bg.out = unit(bg.q_stride) ? grid : checked(grid, p.kernel, bg.q_stride, pad);
        bg.kv_grid = unit(bg.kv_stride) ? grid : checked(grid, p.kernel, bg.kv_stride, pad);
      } else if (is_convolutional(s.kind)) {
        const std::int64_t st = b == 0 ? s.spatial_stride : 1;
        bg.q_stride = {1, st, st};
        bg.out = checked(grid, {1, 3, 3}, bg.q_stride, {0, 1, 1});
        bg.kv_grid = bg.out;
      } else {
        bg.kv_grid = grid;
      }
      grid = bg.out;
      dim = s.dim;
      sg.blocks.push_back(bg);
    }
    sg.out = grid;
    if (static_cast<int>(i) == c.temporal_pool_after) grid = checked(grid, {2, 1, 1}, {2, 1, 1}, {0, 0, 0});
    if (s.merge_after) {
      if (grid.h % 2 != 0 || grid.w % 2 != 0) {
        throw GeometryError("stage " + std::to_string(i) + ": merge needs even H' and W', grid is " + grid.str());
      }
      grid = {grid.t, grid.h / 2, grid.w / 2};
      dim = c.stages[i + 1].dim;
    }
    sg.next = grid;
    g.stages.push_back(sg);
  }
  return g;
}

}  // namespace vtlab::detail
