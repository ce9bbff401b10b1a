// SPDX-License-Identifier: Apache-2.0
//
// Voxel-aligned view transformer: voxelise a point cloud, pull panorama
// features into the occupied voxels by bilinear sampling, and compress the
// vertical axis into a BEV map. The dense variant samples every voxel center.
//
// Voxel frame: (x, y, z) with y as height. Mapping to the sensor frame
// (x forward, y left, z up): voxel x = sensor x, voxel y = sensor z,
// voxel z = sensor y. BEV maps are Z rows by X columns.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "panobev/geometry.hpp"
#include "panobev/tensor.hpp"

namespace panobev {

struct VoxelIndex {
  std::uint32_t ix = 0;
  std::uint32_t iy = 0;
  std::uint32_t iz = 0;
  bool operator==(const VoxelIndex&) const = default;
};

struct GridDims {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t z = 0;
  bool operator==(const GridDims&) const = default;
};

struct VoxelGridSpec {
  // Half extents R and voxel sizes r, in the voxel frame (y is height).
  std::array<double, 3> half_extent{50.0, 4.0, 50.0};
  std::array<double, 3> voxel_size{0.5, 0.5, 0.5};

  /// Full side lengths in (x, height, z) order, e.g. 100 x 8 x 100 m.
  static VoxelGridSpec from_full_extent(double x, double height, double z, double voxel);

  /// Throws InvalidConfig unless extents/sizes are positive and 2R/r is integral.
  void validate() const;
  GridDims dims() const;
  /// Sensor-frame center of a voxel.
  Vec3 center(const VoxelIndex& idx) const noexcept;
};

struct SparseVoxelSet {
  VoxelGridSpec spec{};
  std::vector<VoxelIndex> indices;  // unique, sorted by (iz, iy, ix)
  std::vector<Vec3> centers;        // sensor frame

  std::size_t size() const noexcept { return indices.size(); }
};

/// Per-voxel C-vectors, voxel-major (values[i * C + c]).
template <typename T>
struct VoxelFeatures {
  SparseVoxelSet set;
  std::size_t channels = 0;
  std::vector<T> values;
  std::vector<std::uint8_t> out_of_fov;  // 1 where the center missed the elevation band

  std::span<const T> voxel(std::size_t i) const { return std::span<const T>(values).subspan(i * channels, channels); }
};

enum class CompressMode { mean, sum };

template <typename T>
struct BevFeatureMap {
  FeatureMap<T> features;               // C x Z x X
  std::vector<std::uint32_t> occupancy;  // Z x X in-FoV voxels per column
};

struct PullOptions {
  /// Sensor frame -> camera frame. Identity assumes a shared frame.
  RigidTransform sensor_to_camera = RigidTransform::identity();
};

SparseVoxelSet voxelize(const std::vector<Vec3>& points, const VoxelGridSpec& spec);

template <typename T>
VoxelFeatures<T> voxel_pull(const FeatureMap<T>& image, const SparseVoxelSet& voxels, const AngularGridSpec& grid,
                            const PullOptions& options = {});

/// `grad` is voxel-major N x C. Per-thread partial images are summed in
/// thread order.
template <typename T>
FeatureMap<T> voxel_pull_backward(std::span<const T> grad, const SparseVoxelSet& voxels,
                                  const AngularGridSpec& grid, const Shape& image_shape,
                                  const PullOptions& options = {});

template <typename T>
BevFeatureMap<T> vertical_compress(const VoxelFeatures<T>& vf, CompressMode mode = CompressMode::mean);

/// Per-voxel gradient (N x C); out-of-FoV voxels receive 0.
template <typename T>
std::vector<T> vertical_compress_backward(const FeatureMap<T>& grad_bev, const VoxelFeatures<T>& vf,
                                          CompressMode mode = CompressMode::mean);

/// Pull + compress over every voxel of the grid.
template <typename T>
BevFeatureMap<T> dense_grid_pull(const FeatureMap<T>& image, const VoxelGridSpec& spec, const AngularGridSpec& grid,
                                 CompressMode mode = CompressMode::mean, const PullOptions& options = {});

template <typename T>
FeatureMap<T> dense_grid_pull_backward(const FeatureMap<T>& grad_bev, const VoxelGridSpec& spec, const AngularGridSpec& grid,
                                       const Shape& image_shape, CompressMode mode = CompressMode::mean,
                                       const PullOptions& options = {});

/// Full sparse voxel set covering the grid (test and equivalence helper).
SparseVoxelSet full_voxel_set(const VoxelGridSpec& spec);

}  // namespace panobev
