#pragma once

#include <cmath>

#include "cfa_lab/numeric.hpp"
#include "cfa_lab/world/geometry.hpp"

namespace cfa_lab {

// Bilinear resampling of a sender's ego-centric feature grid into the
// receiver's ego frame. `sender_in_receiver` is the sender pose expressed in
// the receiver frame; both grids span [-half_extent, half_extent) along
// each axis. Cells that fall outside the sender grid are zero.
template <typename T>
BasicGrid<T> warp_feature(const BasicGrid<T>& feature, const Pose& sender_in_receiver, int out_h, int out_w,
                          double half_extent = 24.0) {
  if (feature.rank() != 4) throw DimensionError("warp_feature: expected [B,C,H,W], got " + shape_str(feature.shape()));
  const double so_x = 2 * half_extent / out_w, so_y = 2 * half_extent / out_h;
  const double si_x = 2 * half_extent / feature.dim(3), si_y = 2 * half_extent / feature.dim(2);
  const double c = std::cos(sender_in_receiver.yaw), s = std::sin(sender_in_receiver.yaw);
  const double ox = -half_extent - sender_in_receiver.x, oy = -half_extent - sender_in_receiver.y;
  ops::Affine2d m;
  m.a00 = c * so_x / si_x;
  m.a01 = s * so_y / si_x;
  m.t0 = (c * ox + s * oy + half_extent) / si_x;
  m.a10 = -s * so_x / si_y;
  m.a11 = c * so_y / si_y;
  m.t1 = (-s * ox + c * oy + half_extent) / si_y;
  return ops::affine_resample(feature, m, out_h, out_w);
}

}  // namespace cfa_lab
