// SPDX-License-Identifier: Apache-2.0
//
// Unified LiDAR image: range, intensity and ambient channels on an
// equirectangular grid, plus an explicit validity mask.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "panobev/geometry.hpp"
#include "panobev/tensor.hpp"

namespace panobev {

struct LidarPoint {
  Vec3 position{};
  double intensity = 0.0;
  std::optional<double> ambient;
};

struct PanoLidarImage {
  enum Channel : std::size_t { range = 0, intensity = 1, ambient = 2 };

  AngularGridSpec grid{};
  FeatureMapD channels;              // 3 x rows x cols
  std::vector<std::uint8_t> mask;    // rows x cols, 1 where a return landed
  bool has_ambient = false;          // false when no input point carried ambient
  std::size_t skipped_out_of_fov = 0;

  explicit PanoLidarImage(const AngularGridSpec& g = {1, 1, -1.0, 1.0});

  std::size_t valid_count() const noexcept;
  bool valid(std::size_t row, std::size_t col) const noexcept { return mask[row * grid.cols + col] != 0; }
};

/// Projects every point with round-to-nearest; the nearest return wins a shared
/// pixel. Ties on range fall back to (intensity, ambient, x, y, z, input index),
/// so the result does not depend on input order.
PanoLidarImage encode_pointcloud(const std::vector<LidarPoint>& points, const AngularGridSpec& grid);

/// One point per valid pixel on the ray through the pixel center, row-major.
std::vector<LidarPoint> decode_range_image(const PanoLidarImage& img);

struct LidarNormalization {
  double max_range = 100.0;
  double intensity_scale = 1.0;
  double ambient_scale = 1.0;
};

/// 3 x H x W network input: range / max_range, intensity and ambient scaled
/// and clamped to [0, 1]. Invalid pixels stay 0.
FeatureMapF normalize_lidar_image(const PanoLidarImage& img, const LidarNormalization& stats);

}  // namespace panobev
