// SPDX-License-Identifier: Apache-2.0
//
// Dual-fisheye to equirectangular conversion.
//
// Camera model: optical axis along azimuth `yaw` in the horizontal plane,
// image x to the right of the axis and image y downwards. A ray at angle
// theta from the axis lands at radius r = focal * d(theta) from the optical
// center, with d(theta) = theta (1 + k1 theta^2 + k2 theta^4 + k3 theta^6 +
// k4 theta^8). With all k zero this is the equidistant model r = focal * theta.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "panobev/geometry.hpp"
#include "panobev/tensor.hpp"

namespace panobev {

struct FisheyeCalib {
  double cx = 0.0;     // optical center, pixels
  double cy = 0.0;
  double focal = 1.0;  // pixels per radian
  double fov = kPi;    // full field of view, radians
  double yaw = 0.0;    // optical axis azimuth in the rig frame
  std::array<double, 4> distortion{0.0, 0.0, 0.0, 0.0};

  void validate() const;
  /// Unit optical axis in the rig frame.
  Vec3 axis() const noexcept;
  /// Angle between a unit ray and the optical axis.
  double angle_to_axis(const Vec3& ray) const noexcept;
  /// Projects a unit ray; std::nullopt beyond fov / 2.
  std::optional<PixelCoord> project(const Vec3& ray) const noexcept;
  /// Unit ray through a pixel (inverse of project; Newton on the distortion polynomial).
  Vec3 unproject(PixelCoord px) const noexcept;
};

struct FisheyeConvertOptions {
  double blend_band = 5.0 * kPi / 180.0;  // full width around the bisector
};

struct EquirectImage {
  FeatureMapF rgb;                   // 3 x rows x cols in [0, 1]
  std::vector<std::uint8_t> valid;  // rows x cols
};

/// `left` and `right` are 3 x h x w rasters in [0, 1]. Each output pixel ray is
/// sampled from the camera whose axis is nearer, with a linear blend inside
/// the band where both see it; rays seen by neither camera are black/invalid.
EquirectImage fisheye_to_equirect(const FeatureMapF& left, const FeatureMapF& right, const FisheyeCalib& calib_left,
                                  const FisheyeCalib& calib_right, const AngularGridSpec& grid,
                                  const FisheyeConvertOptions& options = {});

}  // namespace panobev
