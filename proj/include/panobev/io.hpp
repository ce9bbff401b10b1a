// SPDX-License-Identifier: Apache-2.0
//
// Binary file formats. All multi-byte values are little-endian.
//
//   .fmap  "FMAP" u32 C, u32 H, u32 W, then C*H*W f32 (channel-major, row-major)
//   .plx   "PLX1" u32 floats-per-point (4 or 5), u32 count, then records
//          (x, y, z, intensity[, ambient]) as f32
//   .ppm   binary P6, maxval 255
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "panobev/lidar_image.hpp"
#include "panobev/tensor.hpp"

namespace panobev::io {

void write_fmap(std::ostream& os, const FeatureMapF& f);
FeatureMapF read_fmap(std::istream& is);
void write_fmap(const std::filesystem::path& path, const FeatureMapF& f);
FeatureMapF read_fmap(const std::filesystem::path& path);

/// Writes ambient as a fifth float when any point carries it.
void write_plx(std::ostream& os, const std::vector<LidarPoint>& points);
std::vector<LidarPoint> read_plx(std::istream& is);
void write_plx(const std::filesystem::path& path, const std::vector<LidarPoint>& points);
std::vector<LidarPoint> read_plx(const std::filesystem::path& path);

/// 8-bit RGB image as a 3 x H x W map scaled to [0, 1].
void write_ppm(const std::filesystem::path& path, const FeatureMapF& rgb);
FeatureMapF read_ppm(const std::filesystem::path& path);

/// Named tensor bundle: a directory holding `manifest.txt` (one
/// `name C H W` line per tensor) and one `<name>.fmap` blob per tensor.
void write_bundle(const std::filesystem::path& dir, const std::map<std::string, FeatureMapF>& tensors);
std::map<std::string, FeatureMapF> read_bundle(const std::filesystem::path& dir);

}  // namespace panobev::io
