// SPDX-License-Identifier: Apache-2.0
#include "panobev/lidar_image.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace panobev {

namespace {

constexpr long long kNoPixel = -1;

long long project_to_pixel(const Vec3& p, const AngularGridSpec& grid) noexcept {
  const auto px = spherical_to_pixel(cart_to_spherical(p), grid);
  if (!px) return kNoPixel;
  auto col = static_cast<std::size_t>(std::floor(px->u + 0.5));
  auto row = static_cast<std::size_t>(std::floor(px->v + 0.5));
  if (col >= grid.cols) col -= grid.cols;
  if (row >= grid.rows) row = grid.rows - 1;
  return static_cast<long long>(row * grid.cols + col);
}

// Strict total order over input points used to resolve pixel collisions.
bool nearer(const std::vector<LidarPoint>& pts, std::size_t a, std::size_t b) {
  const auto key = [&](std::size_t i) {
    const auto& p = pts[i];
    return std::make_tuple(norm(p.position), p.intensity, p.ambient.value_or(-1.0), p.position.x, p.position.y,
                           p.position.z, i);
  };
  return key(a) < key(b);
}

}  // namespace

PanoLidarImage::PanoLidarImage(const AngularGridSpec& g)
    : grid(g), channels(3, g.rows, g.cols), mask(g.rows * g.cols, 0) {}

std::size_t PanoLidarImage::valid_count() const noexcept {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

PanoLidarImage encode_pointcloud(const std::vector<LidarPoint>& points, const AngularGridSpec& grid) {
  grid.validate();
  PanoLidarImage img(grid);
  const auto n = static_cast<long long>(points.size());

  std::vector<long long> pixel(points.size(), kNoPixel);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) pixel[i] = project_to_pixel(points[i].position, grid);

  std::vector<long long> winner(grid.rows * grid.cols, kNoPixel);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].ambient) img.has_ambient = true;
    const long long p = pixel[i];
    if (p == kNoPixel) {
      ++img.skipped_out_of_fov;
      continue;
    }
    long long& w = winner[p];
    if (w == kNoPixel || nearer(points, i, static_cast<std::size_t>(w))) w = static_cast<long long>(i);
  }

  const std::size_t plane = grid.rows * grid.cols;
  auto data = img.channels.data();
  for (std::size_t p = 0; p < plane; ++p) {
    if (winner[p] == kNoPixel) continue;
    const auto& pt = points[static_cast<std::size_t>(winner[p])];
    img.mask[p] = 1;
    data[PanoLidarImage::range * plane + p] = norm(pt.position);
    data[PanoLidarImage::intensity * plane + p] = pt.intensity;
    data[PanoLidarImage::ambient * plane + p] = pt.ambient.value_or(0.0);
  }
  return img;
}

std::vector<LidarPoint> decode_range_image(const PanoLidarImage& img) {
  std::vector<LidarPoint> out;
  const auto& g = img.grid;
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) {
      if (!img.valid(r, c)) continue;
      const double range = img.channels(PanoLidarImage::range, r, c);
      const auto s = pixel_to_spherical({static_cast<double>(c), static_cast<double>(r)}, g, range);
      LidarPoint p;
      p.position = spherical_to_cart(s);
      p.intensity = img.channels(PanoLidarImage::intensity, r, c);
      if (img.has_ambient) p.ambient = img.channels(PanoLidarImage::ambient, r, c);
      out.push_back(p);
    }
  }
  return out;
}

FeatureMapF normalize_lidar_image(const PanoLidarImage& img, const LidarNormalization& stats) {
  require(stats.max_range > 0 && stats.intensity_scale > 0 && stats.ambient_scale > 0, ErrorCode::invalid_config,
          "normalization scales must be positive");
  const auto& g = img.grid;
  FeatureMapF out(3, g.rows, g.cols);
  const std::size_t plane = g.rows * g.cols;
  const auto src = img.channels.data();
  auto dst = out.data();
  const auto n = static_cast<long long>(plane);
#pragma omp parallel for schedule(static)
  for (long long p = 0; p < n; ++p) {
    if (!img.mask[p]) continue;
    dst[p] = static_cast<float>(src[p] / stats.max_range);
    dst[plane + p] = static_cast<float>(std::clamp(src[plane + p] / stats.intensity_scale, 0.0, 1.0));
    dst[2 * plane + p] = static_cast<float>(std::clamp(src[2 * plane + p] / stats.ambient_scale, 0.0, 1.0));
  }
  return out;
}

}  // namespace panobev
