#pragma once

// Token-grid shapes through a model, shared by the builder and the accounting.

#include <vector>

#include "vtlab/models/config.hpp"

namespace vtlab::detail {

struct BlockGeometry {
  Extent3 in;
  Extent3 out;
  Extent3 q_stride{1, 1, 1};
  Extent3 kv_stride{1, 1, 1};
  Extent3 kv_grid;
  std::int64_t dim_in = 0;
  std::int64_t dim_out = 0;
};

struct StageGeometry {
  std::vector<BlockGeometry> blocks;
  Extent3 out;
  /// Grid after the optional merge / temporal pool that follows the stage.
  Extent3 next;
};

struct ModelGeometry {
  Extent3 embed;  // grid right after the embedding conv
  Extent3 stem;   // after the optional stem pool
  std::vector<StageGeometry> stages;
};

ModelGeometry trace_geometry(const ModelConfig& config, Extent3 input);

inline Extent3 strided(Extent3 in, Extent3 kernel, Extent3 stride, Extent3 padding) {
  return {(in.t + 2 * padding.t - kernel.t) / stride.t + 1, (in.h + 2 * padding.h - kernel.h) / stride.h + 1,
          (in.w + 2 * padding.w - kernel.w) / stride.w + 1};
}

}  // namespace vtlab::detail
