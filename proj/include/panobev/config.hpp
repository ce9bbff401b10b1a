// SPDX-License-Identifier: Apache-2.0
//
// Pipeline configuration: flat `key = value` text with [section] headers.
//
//   [angular]  rows cols elevation_min_deg elevation_max_deg
//   [voxel]    extent_x extent_y extent_z (full sides, y is height)
//              voxel_x voxel_y voxel_z compress (mean|sum)
//   [bev]      rows cols extent
//   [lidar]    max_range intensity_scale ambient_scale
//   [distill]  temperature alpha1 alpha2 stage (1|2|3) aux_route (student|auxiliary)
//   [loss]     s_seg s_cen s_off focal_alpha focal_gamma bmse_sigma
//   [fusion]   refine_input (duplicated|single)
//
// Missing keys keep their defaults.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "panobev/distill.hpp"
#include "panobev/fisheye.hpp"
#include "panobev/fusion.hpp"
#include "panobev/gt_rasterizer.hpp"
#include "panobev/lidar_image.hpp"
#include "panobev/task_losses.hpp"
#include "panobev/view_transformer.hpp"

namespace panobev {

struct PipelineConfig {
  AngularGridSpec angular{64, 1024, -22.5 * kPi / 180.0, 22.5 * kPi / 180.0};
  VoxelGridSpec voxel = VoxelGridSpec::from_full_extent(100.0, 8.0, 100.0, 0.5);
  CompressMode compress = CompressMode::mean;
  BevGridSpec bev{200, 200, 100.0};
  LidarNormalization lidar{};
  DistillConfig distill{};
  AuxGradientRoute aux_route = AuxGradientRoute::into_student;
  LossWeights loss_weights{};
  FocalConfig focal{};
  double bmse_sigma = 1.0;
  RefineInput refine_input = RefineInput::duplicated;

  /// Cross-field checks: the BEV grid must be the X x Z plane of the voxel grid.
  void validate() const;
};

PipelineConfig parse_pipeline_config(std::istream& is);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

struct FisheyeRig {
  FisheyeCalib left{};
  FisheyeCalib right{};
  FisheyeConvertOptions options{};
};

/// [left] / [right]: cx cy focal fov_deg yaw_deg k1 k2 k3 k4; [blend]: band_deg.
FisheyeRig parse_fisheye_rig(std::istream& is);
FisheyeRig load_fisheye_rig(const std::filesystem::path& path);

}  // namespace panobev
