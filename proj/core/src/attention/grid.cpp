#include "vtlab/attention/grid.hpp"

#include "vtlab/errors.hpp"
#include "vtlab/tensor/ops.hpp"

namespace vtlab {

namespace {
constexpr const char* kAxis[3] = {"t", "h", "w"};
}

void validate_grid(const TokenGrid& grid) {
  if (!grid.tokens.defined() || grid.tokens.rank() != 5) {
    throw DimensionError("token grid must be [N, T, H, W, D], got " +
                         (grid.tokens.defined() ? shape_str(grid.tokens.shape()) : std::string("undefined")));
  }
}

void validate_window(const WindowSpec& spec) {
  for (int a = 0; a < 3; ++a) {
    if (spec.window[a] < 1) throw ConfigError(std::string("window extent must be positive on axis ") + kAxis[a]);
    if (spec.shift[a] != 0 && spec.shift[a] != spec.window[a] / 2) {
      throw ConfigError(std::string("shift on axis ") + kAxis[a] + " must be 0 or " +
                        std::to_string(spec.window[a] / 2) + ", got " + std::to_string(spec.shift[a]));
    }
  }
}

WindowSpec effective_window(const WindowSpec& configured, Extent3 grid) {
  WindowSpec out = configured;
  for (int a = 0; a < 3; ++a) {
    if (configured.window[a] >= grid[a]) {
      out.window[a] = grid[a];
      out.shift[a] = 0;
    }
  }
  return out;
}

std::vector<std::int64_t> relpos_index(Extent3 table_window, Extent3 used) {
  for (int a = 0; a < 3; ++a) {
    if (used[a] > table_window[a] || used[a] < 1) {
      throw GeometryError(std::string("window extent ") + std::to_string(used[a]) + " on axis " + kAxis[a] +
                          " does not fit bias table window " + table_window.str());
    }
  }
  const std::int64_t L = used.volume();
  const std::int64_t sh = 2 * table_window.h - 1;
  const std::int64_t sw = 2 * table_window.w - 1;
  std::vector<std::int64_t> index(static_cast<std::size_t>(L * L));
  std::size_t k = 0;
  for (std::int64_t i = 0; i < L; ++i) {
    const std::int64_t ti = i / (used.h * used.w), hi = (i / used.w) % used.h, wi = i % used.w;
    for (std::int64_t j = 0; j < L; ++j, ++k) {
      const std::int64_t tj = j / (used.h * used.w), hj = (j / used.w) % used.h, wj = j % used.w;
      const std::int64_t dt = ti - tj + table_window.t - 1;
      const std::int64_t dh = hi - hj + table_window.h - 1;
      const std::int64_t dw = wi - wj + table_window.w - 1;
      index[k] = (dt * sh + dh) * sw + dw;
    }
  }
  return index;
}

Tensor relpos_bias(const RelPosBiasTable& table, Extent3 used) {
  const auto index = relpos_index(table.window, used);
  const std::int64_t L = used.volume();
  Tensor rows = gather(table.table, 0, index);
  return permute(reshape(rows, {L, L, table.heads}), {2, 0, 1});
}

double mask_value(Dtype dtype) { return dtype == Dtype::F32 ? -1e9 : -1e18; }

}  // namespace vtlab
