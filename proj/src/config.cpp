// SPDX-License-Identifier: Apache-2.0
#include "panobev/config.hpp"

#include <cmath>
#include <fstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace panobev {

namespace {

namespace pt = boost::property_tree;

constexpr double kDeg = kPi / 180.0;

pt::ptree parse_ini(std::istream& is) {
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorCode::parse, e.what());
  }
  return tree;
}

template <typename V>
V get(const pt::ptree& tree, const std::string& key, V fallback) {
  const pt::ptree::path_type path(key, '.');
  // The defaulted overload swallows conversion failures.
  if (!tree.get_child_optional(path)) return fallback;
  try {
    return tree.get<V>(path);
  } catch (const pt::ptree_bad_data&) {
    fail(ErrorCode::parse, "bad value for '" + key + "'");
  }
}

std::string get_str(const pt::ptree& tree, const std::string& key, const std::string& fallback) {
  return tree.get<std::string>(key, fallback);
}

}  // namespace

void PipelineConfig::validate() const {
  angular.validate();
  const GridDims d = voxel.dims();
  bev.validate();
  distill.validate();
  require(bev.rows == d.z && bev.cols == d.x, ErrorCode::invalid_config,
          "BEV grid " + std::to_string(bev.rows) + "x" + std::to_string(bev.cols) + " must equal voxel Z x X " +
              std::to_string(d.z) + "x" + std::to_string(d.x));
  require(std::abs(bev.extent - 2.0 * voxel.half_extent[0]) < 1e-9 &&
              std::abs(bev.extent - 2.0 * voxel.half_extent[2]) < 1e-9,
          ErrorCode::invalid_config, "BEV extent must equal the voxel x and z extents");
  require(bmse_sigma > 0, ErrorCode::invalid_config, "bmse_sigma must be positive");
}

PipelineConfig parse_pipeline_config(std::istream& is) {
  const auto t = parse_ini(is);
  PipelineConfig c;

  c.angular.rows = get<std::size_t>(t, "angular.rows", c.angular.rows);
  c.angular.cols = get<std::size_t>(t, "angular.cols", c.angular.cols);
  c.angular.elevation_min = get<double>(t, "angular.elevation_min_deg", c.angular.elevation_min / kDeg) * kDeg;
  c.angular.elevation_max = get<double>(t, "angular.elevation_max_deg", c.angular.elevation_max / kDeg) * kDeg;

  const double ex = get<double>(t, "voxel.extent_x", 2.0 * c.voxel.half_extent[0]);
  const double ey = get<double>(t, "voxel.extent_y", 2.0 * c.voxel.half_extent[1]);
  const double ez = get<double>(t, "voxel.extent_z", 2.0 * c.voxel.half_extent[2]);
  c.voxel.half_extent = {ex / 2.0, ey / 2.0, ez / 2.0};
  c.voxel.voxel_size = {get<double>(t, "voxel.voxel_x", c.voxel.voxel_size[0]),
                        get<double>(t, "voxel.voxel_y", c.voxel.voxel_size[1]),
                        get<double>(t, "voxel.voxel_z", c.voxel.voxel_size[2])};
  const auto compress = get_str(t, "voxel.compress", "mean");
  require(compress == "mean" || compress == "sum", ErrorCode::parse, "voxel.compress must be mean or sum");
  c.compress = compress == "mean" ? CompressMode::mean : CompressMode::sum;

  // The BEV grid follows the voxel grid unless given explicitly.
  const GridDims d = c.voxel.dims();
  c.bev.rows = get<std::size_t>(t, "bev.rows", d.z);
  c.bev.cols = get<std::size_t>(t, "bev.cols", d.x);
  c.bev.extent = get<double>(t, "bev.extent", ex);

  c.lidar.max_range = get<double>(t, "lidar.max_range", c.lidar.max_range);
  c.lidar.intensity_scale = get<double>(t, "lidar.intensity_scale", c.lidar.intensity_scale);
  c.lidar.ambient_scale = get<double>(t, "lidar.ambient_scale", c.lidar.ambient_scale);

  c.distill.temperature = get<double>(t, "distill.temperature", c.distill.temperature);
  c.distill.alpha1 = get<double>(t, "distill.alpha1", c.distill.alpha1);
  c.distill.alpha2 = get<double>(t, "distill.alpha2", c.distill.alpha2);
  const int stage = get<int>(t, "distill.stage", 3);
  require(stage >= 1 && stage <= 3, ErrorCode::parse, "distill.stage must be 1, 2 or 3");
  c.distill.attach_stage = static_cast<DistillStage>(stage - 1);
  const auto route = get_str(t, "distill.aux_route", "student");
  require(route == "student" || route == "auxiliary", ErrorCode::parse, "distill.aux_route must be student or auxiliary");
  c.aux_route = route == "student" ? AuxGradientRoute::into_student : AuxGradientRoute::auxiliary_only;

  c.loss_weights.log_variance = {get<double>(t, "loss.s_seg", 0.0), get<double>(t, "loss.s_cen", 0.0),
                                 get<double>(t, "loss.s_off", 0.0)};
  c.focal.alpha = get<double>(t, "loss.focal_alpha", c.focal.alpha);
  c.focal.gamma = get<double>(t, "loss.focal_gamma", c.focal.gamma);
  c.bmse_sigma = get<double>(t, "loss.bmse_sigma", c.bmse_sigma);

  const auto refine = get_str(t, "fusion.refine_input", "duplicated");
  require(refine == "duplicated" || refine == "single", ErrorCode::parse,
          "fusion.refine_input must be duplicated or single");
  c.refine_input = refine == "duplicated" ? RefineInput::duplicated : RefineInput::single;

  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCode::io, "cannot open config " + path.string());
  return parse_pipeline_config(f);
}

FisheyeRig parse_fisheye_rig(std::istream& is) {
  const auto t = parse_ini(is);
  FisheyeRig rig;
  const auto load = [&](const std::string& s, FisheyeCalib& c) {
    require(t.get_child_optional(s).has_value(), ErrorCode::parse, "fisheye calibration needs a [" + s + "] section");
    c.cx = get<double>(t, s + ".cx", c.cx);
    c.cy = get<double>(t, s + ".cy", c.cy);
    c.focal = get<double>(t, s + ".focal", c.focal);
    c.fov = get<double>(t, s + ".fov_deg", c.fov / kDeg) * kDeg;
    c.yaw = get<double>(t, s + ".yaw_deg", c.yaw / kDeg) * kDeg;
    for (int k = 0; k < 4; ++k) c.distortion[k] = get<double>(t, s + ".k" + std::to_string(k + 1), 0.0);
    c.validate();
  };
  load("left", rig.left);
  load("right", rig.right);
  rig.options.blend_band = get<double>(t, "blend.band_deg", rig.options.blend_band / kDeg) * kDeg;
  return rig;
}

FisheyeRig load_fisheye_rig(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCode::io, "cannot open calibration " + path.string());
  return parse_fisheye_rig(f);
}

}  // namespace panobev
