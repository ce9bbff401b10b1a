// SPDX-License-Identifier: Apache-2.0
//
// BEV ground truth from 3D boxes and per-frame annotation filtering.
//
// BEV cells: row r, column c has its center at
//   x = -extent/2 + (c + 0.5) * meters_per_cell   (sensor forward)
//   y = -extent/2 + (r + 0.5) * meters_per_cell   (sensor left)
// which matches the Z x X layout of the view transformer output.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "panobev/geometry.hpp"
#include "panobev/tensor.hpp"

namespace panobev {

enum class BoxKind { static_object, dynamic_object };

struct Box3D {
  Vec3 center{};
  double length = 0.0;  // along the heading
  double width = 0.0;
  double height = 0.0;
  double yaw = 0.0;  // about +z, counter-clockwise from +x
  std::string category = "car";
  BoxKind kind = BoxKind::static_object;
  std::optional<std::int64_t> frame_id;
};

struct BevGridSpec {
  std::size_t rows = 200;
  std::size_t cols = 200;
  double extent = 100.0;  // meters per side

  /// Parses "200x200@100m".
  static BevGridSpec parse(const std::string& text);
  void validate() const;
  double meters_per_cell() const noexcept { return extent / static_cast<double>(rows); }
  /// Sensor-frame (x, y) of a cell center.
  std::array<double, 2> cell_center(std::size_t row, std::size_t col) const noexcept;
};

struct Rasterized {
  std::vector<std::uint8_t> seg;      // rows x cols
  std::vector<std::int32_t> instance;  // rows x cols, -1 where empty, else box index
};

/// A cell is positive iff its center lies in the yaw-rotated footprint of a
/// box (boundary inclusive). The later box wins the instance id on overlap.
Rasterized rasterize_boxes(const std::vector<Box3D>& boxes, const BevGridSpec& spec);

/// Max-composited isotropic Gaussians around each instance's footprint
/// centroid (in cell units). Zero everywhere when there are no instances.
std::vector<float> make_centerness(const std::vector<std::int32_t>& instance, const BevGridSpec& spec,
                                   double sigma_cells = 2.0);

struct OffsetTargets {
  FeatureMapF offset;                // 2 x rows x cols (dx, dy) meters to the owning centroid
  std::vector<std::uint8_t> valid;  // rows x cols
};

OffsetTargets make_offset(const std::vector<std::int32_t>& instance, const BevGridSpec& spec);

/// Stacked targets as written by `rasterize-gt`: seg, centerness, offset x,
/// offset y, valid (5 x rows x cols).
FeatureMapF make_bev_targets(const std::vector<Box3D>& boxes, const BevGridSpec& spec, double sigma_cells = 2.0);

/// Point inside the box (boundary inclusive on all three axes).
bool box_contains(const Vec3& point, const Box3D& box) noexcept;

struct FilterOptions {
  std::size_t min_points = 1;
};

/// Static boxes survive iff at least `min_points` cloud points fall inside;
/// dynamic boxes survive iff their frame id equals `frame_id`. Order is kept.
/// Throws MissingFrameId for a dynamic box without a frame id.
std::vector<Box3D> filter_static_boxes(const std::vector<Box3D>& boxes, const std::vector<Vec3>& frame_cloud,
                                       std::int64_t frame_id, const FilterOptions& options = {});

/// Rejected distance-only strategy: keeps static boxes whose center is within
/// `max_distance` of the sensor. Kept as a comparison foil.
std::vector<Box3D> filter_static_boxes_by_distance(const std::vector<Box3D>& boxes, std::int64_t frame_id,
                                                   double max_distance);

/// Line format: `kind category cx cy cz l w h yaw [frame_id]`, kind is
/// `static` or `dynamic`; blank lines and `#` comments are skipped.
std::vector<Box3D> read_boxes(std::istream& is);
void write_boxes(std::ostream& os, const std::vector<Box3D>& boxes);

}  // namespace panobev
