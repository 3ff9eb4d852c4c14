#pragma once

#include <cstdint>

namespace vbev {

// Ground-truth 3D box, in the world or ego frame depending on the holder.
// Single precision so that a dataset written as 32-bit floats reads back
// bit-identical.
struct Box3D {
  float cx = 0, cy = 0, cz = 0;  // center (m)
  float w = 1, l = 1, h = 1;     // size (m); l along heading, w across
  float yaw = 0;                 // rad, counter-clockwise from +x
  float vx = 0, vy = 0;          // m/s
  std::int32_t cls = 0;

  bool operator==(const Box3D&) const = default;
};

}  // namespace vbev
