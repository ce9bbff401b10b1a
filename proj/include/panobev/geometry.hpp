// SPDX-License-Identifier: Apache-2.0
//
// Spherical geometry for equirectangular panoramas.
//
// Frame convention: x forward, y left, z up. Azimuth is measured
// counter-clockwise from +x (towards +y) and wrapped into [-pi, pi).
// Elevation is positive above the horizontal plane.
#pragma once

#include <array>
#include <cstddef>
#include <numbers>
#include <optional>

namespace panobev {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) noexcept { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) noexcept { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) noexcept { return {s * a.x, s * a.y, s * a.z}; }
  bool operator==(const Vec3&) const = default;
};

double dot(Vec3 a, Vec3 b) noexcept;
double norm(Vec3 a) noexcept;

struct SphericalCoord {
  double azimuth = 0.0;
  double elevation = 0.0;
  double range = 0.0;
};

/// Equirectangular grid: full azimuth circle over `cols`, elevation band over `rows`.
struct AngularGridSpec {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double elevation_min = 0.0;
  double elevation_max = 0.0;

  /// Throws InvalidConfig when rows/cols are zero or the elevation band is empty.
  void validate() const;
  double elevation_span() const noexcept { return elevation_max - elevation_min; }
};

/// Continuous pixel coordinate; integer values sit on pixel centers.
struct PixelCoord {
  double u = 0.0;  // column
  double v = 0.0;  // row
};

/// Rotation (row-major) followed by translation.
struct RigidTransform {
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 translation{};

  Vec3 apply(Vec3 p) const noexcept;
  static RigidTransform identity() noexcept { return {}; }
  static RigidTransform yaw(double radians, Vec3 translation = {}) noexcept;
};

double wrap_azimuth(double azimuth) noexcept;

SphericalCoord cart_to_spherical(Vec3 p) noexcept;

/// Unit direction for (azimuth, elevation).
Vec3 spherical_direction(double azimuth, double elevation) noexcept;

Vec3 spherical_to_cart(const SphericalCoord& s) noexcept;

/// Linear map: azimuth -pi -> u=0, +pi -> u=cols; elevation_max -> v=0,
/// elevation_min -> v=rows. std::nullopt when the elevation is outside the band
/// (with 1e-12 rad of slack at the edges).
std::optional<PixelCoord> spherical_to_pixel(const SphericalCoord& s, const AngularGridSpec& grid) noexcept;

/// Inverse of spherical_to_pixel for the angular part.
SphericalCoord pixel_to_spherical(PixelCoord px, const AngularGridSpec& grid, double range = 1.0) noexcept;

}  // namespace panobev
