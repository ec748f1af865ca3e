#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ovseg/error.hpp"
#include "ovseg/geometry.hpp"
#include "ovseg/masks2d.hpp"

namespace ovseg {

// Per-point mask probabilities of one frame. Invisible points hold 0.
struct LiftedMasks3D {
  std::string frame_id;
  int num_masks = 0;
  std::size_t num_points = 0;
  std::vector<float> values;  // N*M, mask-major
  std::vector<std::uint8_t> visible;

  std::span<const float> mask(int i) const {
    return {values.data() + static_cast<std::size_t>(i) * num_points, num_points};
  }
  float at(int i, std::size_t x) const {
    return values[static_cast<std::size_t>(i) * num_points + x];
  }
};

inline LiftedMasks3D lift_masks(const MaskSet2D& maskset, const FrameCorrespondence& corr,
                                const std::string& frame_id) {
  if (maskset.frame_id != frame_id || corr.frame_id != frame_id) {
    fail("frame mismatch: mask set '" + maskset.frame_id + "', correspondence '" +
         corr.frame_id + "', requested '" + frame_id + "'");
  }
  require(maskset.width == corr.width && maskset.height == corr.height,
          "frame mismatch: mask size differs from frame size");
  LiftedMasks3D out;
  out.frame_id = frame_id;
  out.num_masks = maskset.num_masks;
  out.num_points = corr.num_points();
  out.visible = corr.visible;
  out.values.assign(static_cast<std::size_t>(out.num_masks) * out.num_points, 0.0f);
  for (int i = 0; i < maskset.num_masks; ++i) {
    float* row = out.values.data() + static_cast<std::size_t>(i) * out.num_points;
    for (std::size_t e = 0; e < corr.point_index.size(); ++e) {
      const auto& px = corr.pixels[e];
      row[corr.point_index[e]] = maskset.mask_at(i, px.u, px.v);
    }
  }
  return out;
}

}  // namespace ovseg
