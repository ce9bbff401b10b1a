// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "panobev/fisheye.hpp"
#include "panobev/parallel.hpp"
#include "support.hpp"

using namespace panobev;

namespace {

constexpr std::size_t kSide = 256;

FisheyeCalib rig_camera(double yaw, double fov_deg = 200.0) {
  FisheyeCalib c;
  c.cx = 127.5;
  c.cy = 127.5;
  c.fov = fov_deg * kPi / 180.0;
  c.focal = 125.0 / (c.fov / 2.0);
  c.yaw = yaw;
  return c;
}

// Equidistant ray through a pixel, written out from the camera model: image x
// to the right of the axis, y down.
Vec3 equidistant_ray(const FisheyeCalib& c, double x, double y) {
  const double dx = x - c.cx, dy = y - c.cy;
  const double r = std::hypot(dx, dy);
  const double theta = r / c.focal;
  const Vec3 axis{std::cos(c.yaw), std::sin(c.yaw), 0.0};
  const Vec3 right{std::sin(c.yaw), -std::cos(c.yaw), 0.0};
  const Vec3 down{0.0, 0.0, -1.0};
  if (r == 0.0) return axis;
  const double a = std::sin(theta) / r;
  return {std::cos(theta) * axis.x + a * (dx * right.x + dy * down.x),
          std::cos(theta) * axis.y + a * (dx * right.y + dy * down.y),
          std::cos(theta) * axis.z + a * (dx * right.z + dy * down.z)};
}

// Smooth colour pattern over the sphere.
std::array<double, 3> pattern(const Vec3& ray) {
  const auto s = cart_to_spherical(ray);
  return {0.5 + 0.3 * std::sin(2 * s.azimuth) * std::cos(s.elevation), 0.5 + 0.3 * std::sin(1.5 * s.elevation),
          0.5 + 0.2 * std::cos(s.azimuth + s.elevation)};
}

FeatureMapF render(const FisheyeCalib& c) {
  FeatureMapF img(3, kSide, kSide);
  for (std::size_t y = 0; y < kSide; ++y)
    for (std::size_t x = 0; x < kSide; ++x) {
      const auto col = pattern(equidistant_ray(c, static_cast<double>(x), static_cast<double>(y)));
      for (std::size_t k = 0; k < 3; ++k) img(k, y, x) = static_cast<float>(col[k]);
    }
  return img;
}

double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(norm(Vec3{a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}), dot(a, b));
}

}  // namespace

TEST_CASE("projection conventions") {
  const auto c = rig_camera(0.4);
  const auto center = c.project(c.axis());
  REQUIRE(center);
  CHECK(center->u == c.cx);
  CHECK(center->v == c.cy);

  test::Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double x = rng.uniform(0, 255), y = rng.uniform(0, 255);
    if (std::hypot(x - c.cx, y - c.cy) > 120) continue;
    const Vec3 ray = equidistant_ray(c, x, y);
    const auto px = c.project(ray);
    REQUIRE(px);
    CHECK(px->u == doctest::Approx(x).epsilon(1e-9));
    CHECK(px->v == doctest::Approx(y).epsilon(1e-9));
    const Vec3 back = c.unproject(*px);
    CHECK(norm(back - ray) < 1e-9);
  }
  // A point up and to the right of the axis lands up and right in the image.
  const auto px = c.project(spherical_direction(0.4 - 0.2, 0.1));
  CHECK(px->u > c.cx);
  CHECK(px->v < c.cy);
  CHECK_FALSE(c.project(spherical_direction(0.4 + kPi, 0.0)));
}

TEST_CASE("distorted unprojection inverts projection") {
  auto c = rig_camera(-1.0, 190);
  c.distortion = {-0.02, 0.003, 0.0, 0.0};
  test::Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 ray = spherical_direction(-1.0 + rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2));
    const auto px = c.project(ray);
    if (!px) continue;
    CHECK(norm(c.unproject(*px) - ray) < 1e-9);
  }
}

TEST_CASE("calibration validation") {
  auto c = rig_camera(0);
  c.focal = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = rig_camera(0);
  c.fov = 7.0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("a constant pair converts to a constant valid region") {
  const auto l = rig_camera(kPi / 2), r = rig_camera(-kPi / 2);
  FeatureMapF a(3, kSide, kSide), b(3, kSide, kSide);
  for (std::size_t k = 0; k < 3; ++k) {
    std::fill(a.channel(k).begin(), a.channel(k).end(), 0.2f + 0.3f * static_cast<float>(k));
    std::fill(b.channel(k).begin(), b.channel(k).end(), 0.2f + 0.3f * static_cast<float>(k));
  }
  const auto eq = fisheye_to_equirect(a, b, l, r, {64, 128, -kPi / 2, kPi / 2});
  for (std::size_t p = 0; p < eq.valid.size(); ++p) {
    if (!eq.valid[p]) continue;
    for (std::size_t k = 0; k < 3; ++k) CHECK(eq.rgb.channel(k)[p] == 0.2f + 0.3f * static_cast<float>(k));
  }
}

TEST_CASE("round trip through rendered fisheyes stays within 2/255") {
  const auto l = rig_camera(kPi / 2), r = rig_camera(-kPi / 2);
  const AngularGridSpec grid{90, 180, -kPi / 2, kPi / 2};
  const auto eq = fisheye_to_equirect(render(l), render(r), l, r, grid);
  double worst = 0.0;
  std::size_t compared = 0;
  for (std::size_t row = 1; row + 1 < grid.rows; ++row)
    for (std::size_t col = 0; col < grid.cols; ++col) {
      // Skip the one-pixel border of the valid region.
      bool interior = true;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const std::size_t rr = row + dr, cc = (col + grid.cols + dc) % grid.cols;
          interior &= eq.valid[rr * grid.cols + cc] != 0;
        }
      if (!interior) continue;
      const auto s = pixel_to_spherical({static_cast<double>(col), static_cast<double>(row)}, grid);
      const auto expected = pattern(spherical_direction(s.azimuth, s.elevation));
      for (std::size_t k = 0; k < 3; ++k)
        worst = std::max(worst, std::abs(eq.rgb(k, row, col) - expected[k]));
      ++compared;
    }
  CHECK(compared > grid.rows * grid.cols / 2);
  CHECK(worst < 2.0 / 255.0);
  MESSAGE("round-trip max error " << worst * 255.0 << "/255 over " << compared << " pixels");
}

TEST_CASE("swapping cameras with their calibrations leaves the output unchanged") {
  const auto l = rig_camera(kPi / 2 + 0.1, 195), r = rig_camera(-kPi / 2 + 0.05, 205);
  const auto a = render(l), b = render(r);
  const AngularGridSpec grid{45, 90, -kPi / 2, kPi / 2};
  const auto x = fisheye_to_equirect(a, b, l, r, grid);
  const auto y = fisheye_to_equirect(b, a, r, l, grid);
  CHECK(x.valid == y.valid);
  CHECK(x.rgb == y.rgb);
}

TEST_CASE("coverage is the union of the two fields of view") {
  const auto l = rig_camera(kPi / 2, 150), r = rig_camera(-kPi / 2 + 0.3, 120);
  const AngularGridSpec grid{60, 120, -kPi / 2, kPi / 2};
  const auto eq = fisheye_to_equirect(render(l), render(r), l, r, grid);
  std::size_t mismatches = 0, covered = 0;
  for (std::size_t row = 0; row < grid.rows; ++row)
    for (std::size_t col = 0; col < grid.cols; ++col) {
      const auto s = pixel_to_spherical({static_cast<double>(col), static_cast<double>(row)}, grid);
      const Vec3 ray = spherical_direction(s.azimuth, s.elevation);
      const bool expected = angle_between(ray, l.axis()) <= l.fov / 2 || angle_between(ray, r.axis()) <= r.fov / 2;
      mismatches += expected != (eq.valid[row * grid.cols + col] != 0);
      covered += expected;
    }
  CHECK(mismatches == 0);
  CHECK(covered > 0);
  CHECK(covered < grid.rows * grid.cols);
}

TEST_CASE("conversion is independent of the thread count") {
  const auto l = rig_camera(kPi / 2), r = rig_camera(-kPi / 2);
  const auto a = render(l), b = render(r);
  const AngularGridSpec grid{32, 64, -kPi / 2, kPi / 2};
  EquirectImage serial;
  {
    ThreadCountGuard one(1);
    serial = fisheye_to_equirect(a, b, l, r, grid);
  }
  ThreadCountGuard three(3);
  CHECK(fisheye_to_equirect(a, b, l, r, grid).rgb == serial.rgb);
}
