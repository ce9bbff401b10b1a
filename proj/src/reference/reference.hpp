// SPDX-License-Identifier: Apache-2.0
//
// Serial reference kernels. Straight loops with no OpenMP, written
// independently of the production kernels but with the same floating-point
// accumulation order, so a single-threaded production run must agree bit for
// bit. Used by tests and benchmarks only.
#pragma once

#include <cstdint>
#include <vector>

#include "panobev/fusion.hpp"
#include "panobev/gt_rasterizer.hpp"
#include "panobev/lidar_image.hpp"
#include "panobev/view_transformer.hpp"

namespace panobev::reference {

/// Bilinear blend with wrapped columns and clamped rows.
template <typename T>
std::vector<T> sample(const FeatureMap<T>& f, double u, double v);

PanoLidarImage encode_pointcloud(const std::vector<LidarPoint>& points, const AngularGridSpec& grid);

template <typename T>
VoxelFeatures<T> voxel_pull(const FeatureMap<T>& image, const SparseVoxelSet& voxels, const AngularGridSpec& grid,
                            const PullOptions& options = {});

template <typename T>
FeatureMap<T> voxel_pull_backward(const std::vector<T>& grad, const SparseVoxelSet& voxels,
                                  const AngularGridSpec& grid, const Shape& image_shape,
                                  const PullOptions& options = {});

/// Dense Z x Y x X scatter followed by a masked reduction over Y.
template <typename T>
BevFeatureMap<T> vertical_compress(const VoxelFeatures<T>& vf, CompressMode mode = CompressMode::mean);

template <typename T>
BevFeatureMap<T> dense_grid_pull(const FeatureMap<T>& image, const VoxelGridSpec& spec, const AngularGridSpec& grid,
                                 CompressMode mode = CompressMode::mean, const PullOptions& options = {});

template <typename T>
FeatureMap<T> sgfm_forward(const FeatureMap<T>& image, const FeatureMap<T>& lidar, const SgfmParams<T>& params);

/// Channel-wise KL with an explicit two-pass softmax in long double.
double kl_channelwise(const FeatureMapD& teacher, const FeatureMapD& student, double temperature);

/// Tests every cell against every box.
Rasterized rasterize_boxes(const std::vector<Box3D>& boxes, const BevGridSpec& spec);

/// Counts every point in every box, no early exit.
std::vector<Box3D> filter_static_boxes(const std::vector<Box3D>& boxes, const std::vector<Vec3>& frame_cloud,
                                       std::int64_t frame_id, std::size_t min_points = 1);

}  // namespace panobev::reference
