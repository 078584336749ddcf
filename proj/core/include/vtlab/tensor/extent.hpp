#pragma once

#include <cstdint>
#include <string>

namespace vtlab {

/// A (t, h, w) triple used for kernels, strides, windows and grid extents.
struct Extent3 {
  std::int64_t t = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  std::int64_t volume() const { return t * h * w; }
  std::int64_t operator[](int axis) const { return axis == 0 ? t : (axis == 1 ? h : w); }
  std::int64_t& operator[](int axis) { return axis == 0 ? t : (axis == 1 ? h : w); }
  bool operator==(const Extent3&) const = default;

  std::string str() const {
    return "(" + std::to_string(t) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

}  // namespace vtlab
