#pragma once

#include <cstdint>
#include <vector>

#include "vtlab/tensor/extent.hpp"
#include "vtlab/tensor/tensor.hpp"

namespace vtlab {

/// Embedded tokens [N, T', H', W', D] with their spatiotemporal layout kept.
struct TokenGrid {
  Tensor tokens;
  Extent3 patch{1, 1, 1};
  /// Zero tokens appended at the end of each axis to reach window multiples.
  Extent3 pad{0, 0, 0};

  std::int64_t batch() const { return tokens.dim(0); }
  Extent3 extents() const { return {tokens.dim(1), tokens.dim(2), tokens.dim(3)}; }
  std::int64_t channels() const { return tokens.dim(4); }
  std::int64_t length() const { return extents().volume(); }
};

/// Checks rank 5 and positive extents.
void validate_grid(const TokenGrid& grid);

struct WindowSpec {
  Extent3 window{1, 1, 1};
  Extent3 shift{0, 0, 0};

  bool shifted() const { return shift.t != 0 || shift.h != 0 || shift.w != 0; }
  bool operator==(const WindowSpec&) const = default;
};

/// Per axis, shift must be 0 or floor(window / 2).
void validate_window(const WindowSpec& spec);

/// Window spec a block actually uses on a grid: an axis whose window covers
/// the whole grid is clamped to the grid and left unshifted.
WindowSpec effective_window(const WindowSpec& configured, Extent3 grid);

/// Learned per-head bias over window-relative offsets.
struct RelPosBiasTable {
  Extent3 window;
  std::int64_t heads = 0;
  /// [(2Wt-1)(2Wh-1)(2Ww-1), heads]
  Tensor table;

  static std::int64_t entries(Extent3 window) {
    return (2 * window.t - 1) * (2 * window.h - 1) * (2 * window.w - 1);
  }
};

/// Table row for every (query, key) pair of a window of extent `used`, which
/// must fit inside the table's window. Row-major over [L, L].
std::vector<std::int64_t> relpos_index(Extent3 table_window, Extent3 used);

/// Bias [heads, L, L] for a window of extent `used`.
Tensor relpos_bias(const RelPosBiasTable& table, Extent3 used);

/// Additive mask [num_windows, L, L]: 0 where two tokens may attend, a large
/// negative constant elsewhere.
struct AttentionMask {
  Tensor values;
  std::int64_t windows() const { return values.dim(0); }
};

/// Additive constant used for blocked pairs at the given precision.
double mask_value(Dtype dtype);

}  // namespace vtlab
