// SPDX-License-Identifier: Apache-2.0
#include "panobev/fisheye.hpp"

#include <algorithm>
#include <cmath>

#include "panobev/sampling.hpp"

namespace panobev {

namespace {

struct CameraRay {
  double forward = 0.0;
  double left = 0.0;
  double up = 0.0;
};

CameraRay to_camera(const Vec3& ray, double yaw) noexcept {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * ray.x + s * ray.y, -s * ray.x + c * ray.y, ray.z};
}

double distort(const std::array<double, 4>& k, double theta) noexcept {
  const double t2 = theta * theta;
  return theta * (1.0 + t2 * (k[0] + t2 * (k[1] + t2 * (k[2] + t2 * k[3]))));
}

double distort_derivative(const std::array<double, 4>& k, double theta) noexcept {
  const double t2 = theta * theta;
  return 1.0 + t2 * (3.0 * k[0] + t2 * (5.0 * k[1] + t2 * (7.0 * k[2] + t2 * 9.0 * k[3])));
}

bool inside(const PixelCoord& px, std::size_t h, std::size_t w) noexcept {
  return px.u >= 0.0 && px.v >= 0.0 && px.u <= static_cast<double>(w - 1) && px.v <= static_cast<double>(h - 1);
}

}  // namespace

void FisheyeCalib::validate() const {
  require(std::isfinite(focal) && focal > 0, ErrorCode::invalid_config, "fisheye focal scale must be positive");
  require(std::isfinite(fov) && fov > 0 && fov <= kTwoPi, ErrorCode::invalid_config, "fisheye fov must be in (0, 2pi]");
  require(std::isfinite(cx) && std::isfinite(cy) && std::isfinite(yaw), ErrorCode::invalid_config,
          "fisheye center and yaw must be finite");
}

Vec3 FisheyeCalib::axis() const noexcept { return {std::cos(yaw), std::sin(yaw), 0.0}; }

double FisheyeCalib::angle_to_axis(const Vec3& ray) const noexcept {
  const CameraRay r = to_camera(ray, yaw);
  return std::atan2(std::hypot(r.left, r.up), r.forward);
}

std::optional<PixelCoord> FisheyeCalib::project(const Vec3& ray) const noexcept {
  const CameraRay r = to_camera(ray, yaw);
  const double rho = std::hypot(r.left, r.up);
  const double theta = std::atan2(rho, r.forward);
  if (theta > fov / 2.0) return std::nullopt;
  if (rho == 0.0) return PixelCoord{cx, cy};
  const double radius = focal * distort(distortion, theta);
  return PixelCoord{cx - radius * r.left / rho, cy - radius * r.up / rho};
}

Vec3 FisheyeCalib::unproject(PixelCoord px) const noexcept {
  const double du = px.u - cx;
  const double dv = px.v - cy;
  const double radius = std::hypot(du, dv);
  if (radius == 0.0) return axis();
  const double target = radius / focal;
  double theta = target;
  for (int it = 0; it < 20; ++it) {
    const double step = (distort(distortion, theta) - target) / distort_derivative(distortion, theta);
    theta -= step;
    if (std::abs(step) < 1e-15) break;
  }
  const double st = std::sin(theta);
  const double forward = std::cos(theta);
  const double left = -st * du / radius;
  const double up = -st * dv / radius;
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * forward - s * left, s * forward + c * left, up};
}

EquirectImage fisheye_to_equirect(const FeatureMapF& left, const FeatureMapF& right, const FisheyeCalib& calib_left,
                                  const FisheyeCalib& calib_right, const AngularGridSpec& grid,
                                  const FisheyeConvertOptions& options) {
  grid.validate();
  calib_left.validate();
  calib_right.validate();
  require(left.channels() == right.channels() && !left.empty() && !right.empty(), ErrorCode::shape_mismatch,
          "fisheye inputs must be non-empty with matching channel counts");
  const std::size_t C = left.channels();
  EquirectImage out{FeatureMapF(C, grid.rows, grid.cols), std::vector<std::uint8_t>(grid.rows * grid.cols, 0)};
  const std::size_t plane = grid.rows * grid.cols;
  const double band = options.blend_band;

  const auto n = static_cast<long long>(plane);
#pragma omp parallel
  {
    std::vector<float> sl(C);
    std::vector<float> sr(C);
#pragma omp for schedule(static)
    for (long long p = 0; p < n; ++p) {
      const auto row = static_cast<std::size_t>(p) / grid.cols;
      const auto col = static_cast<std::size_t>(p) % grid.cols;
      const auto s = pixel_to_spherical({static_cast<double>(col), static_cast<double>(row)}, grid);
      const Vec3 ray = spherical_direction(s.azimuth, s.elevation);

      auto pl = calib_left.project(ray);
      auto pr = calib_right.project(ray);
      if (pl && !inside(*pl, left.height(), left.width())) pl.reset();
      if (pr && !inside(*pr, right.height(), right.width())) pr.reset();
      if (!pl && !pr) continue;

      double wl = pl ? 1.0 : 0.0;
      double wr = pr ? 1.0 : 0.0;
      if (pl && pr) {
        const double tl = calib_left.angle_to_axis(ray);
        const double tr = calib_right.angle_to_axis(ray);
        if (band > 0.0) {
          wl = std::clamp(0.5 + (tr - tl) / band, 0.0, 1.0);
          wr = std::clamp(0.5 + (tl - tr) / band, 0.0, 1.0);
        } else {
          wl = tl < tr ? 1.0 : tl > tr ? 0.0 : 0.5;
          wr = tr < tl ? 1.0 : tr > tl ? 0.0 : 0.5;
        }
      }
      std::fill(sl.begin(), sl.end(), 0.0f);
      std::fill(sr.begin(), sr.end(), 0.0f);
      if (wl > 0.0) bilinear_sample<float>(left, pl->u, pl->v, sl, HorizontalBoundary::clamp);
      if (wr > 0.0) bilinear_sample<float>(right, pr->u, pr->v, sr, HorizontalBoundary::clamp);
      const auto fl = static_cast<float>(wl);
      const auto fr = static_cast<float>(wr);
      auto d = out.rgb.data();
      for (std::size_t c = 0; c < C; ++c) {
        float v = 0.0f;
        if (wr == 0.0) {
          v = sl[c];
        } else if (wl == 0.0) {
          v = sr[c];
        } else if (sl[c] <= sr[c]) {
          // Lerp from the smaller sample: exact for equal samples and symmetric in the two cameras.
          v = sl[c] + fr * (sr[c] - sl[c]);
        } else {
          v = sr[c] + fl * (sl[c] - sr[c]);
        }
        d[c * plane + static_cast<std::size_t>(p)] = v;
      }
      out.valid[static_cast<std::size_t>(p)] = 1;
    }
  }
  return out;
}

}  // namespace panobev
