// SPDX-License-Identifier: Apache-2.0
#include "panobev/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "panobev/error.hpp"

namespace panobev {

double dot(Vec3 a, Vec3 b) noexcept { return a.x * b.x + a.y * b.y + a.z * b.z; }

double norm(Vec3 a) noexcept { return std::sqrt(dot(a, a)); }

void AngularGridSpec::validate() const {
  require(rows >= 1 && cols >= 1, ErrorCode::invalid_config, "angular grid needs rows, cols >= 1");
  require(std::isfinite(elevation_min) && std::isfinite(elevation_max) && elevation_min < elevation_max,
          ErrorCode::invalid_config,
          "angular grid needs elevation_min < elevation_max (got " + std::to_string(elevation_min) + ", " +
              std::to_string(elevation_max) + ")");
}

Vec3 RigidTransform::apply(Vec3 p) const noexcept {
  const auto& r = rotation;
  return {r[0] * p.x + r[1] * p.y + r[2] * p.z + translation.x,
          r[3] * p.x + r[4] * p.y + r[5] * p.z + translation.y,
          r[6] * p.x + r[7] * p.y + r[8] * p.z + translation.z};
}

RigidTransform RigidTransform::yaw(double radians, Vec3 translation) noexcept {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  return {{c, -s, 0, s, c, 0, 0, 0, 1}, translation};
}

double wrap_azimuth(double azimuth) noexcept {
  if (azimuth >= -kPi && azimuth < kPi) return azimuth;
  double a = std::fmod(azimuth + kPi, kTwoPi);
  if (a < 0) a += kTwoPi;
  a -= kPi;
  // fmod rounding can land exactly on +pi
  return a >= kPi ? -kPi : a;
}

SphericalCoord cart_to_spherical(Vec3 p) noexcept {
  const double range = norm(p);
  if (range == 0.0) return {0.0, 0.0, 0.0};
  const double elevation = std::asin(std::clamp(p.z / range, -1.0, 1.0));
  return {wrap_azimuth(std::atan2(p.y, p.x)), elevation, range};
}

Vec3 spherical_direction(double azimuth, double elevation) noexcept {
  const double ce = std::cos(elevation);
  return {ce * std::cos(azimuth), ce * std::sin(azimuth), std::sin(elevation)};
}

Vec3 spherical_to_cart(const SphericalCoord& s) noexcept {
  return s.range * spherical_direction(s.azimuth, s.elevation);
}

std::optional<PixelCoord> spherical_to_pixel(const SphericalCoord& s, const AngularGridSpec& grid) noexcept {
  // A few ulps of slack so pixel centers on the band edge survive a Cartesian round trip.
  constexpr double kBandSlack = 1e-12;
  if (!(s.elevation >= grid.elevation_min - kBandSlack && s.elevation <= grid.elevation_max + kBandSlack))
    return std::nullopt;
  const double u = (s.azimuth + kPi) / kTwoPi * static_cast<double>(grid.cols);
  const double v = (grid.elevation_max - s.elevation) / grid.elevation_span() * static_cast<double>(grid.rows);
  return PixelCoord{u, v};
}

SphericalCoord pixel_to_spherical(PixelCoord px, const AngularGridSpec& grid, double range) noexcept {
  const double az = px.u / static_cast<double>(grid.cols) * kTwoPi - kPi;
  const double el = grid.elevation_max - px.v / static_cast<double>(grid.rows) * grid.elevation_span();
  return {wrap_azimuth(az), el, range};
}

}  // namespace panobev
