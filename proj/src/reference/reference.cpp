// SPDX-License-Identifier: Apache-2.0
#include "reference/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace panobev::reference {

namespace {

std::optional<PixelCoord> project(const Vec3& p, const AngularGridSpec& grid, const PullOptions& options) {
  return spherical_to_pixel(cart_to_spherical(options.sensor_to_camera.apply(p)), grid);
}

}  // namespace

template <typename T>
std::vector<T> sample(const FeatureMap<T>& f, double u, double v) {
  const long long H = static_cast<long long>(f.height());
  const long long W = static_cast<long long>(f.width());
  v = std::min(std::max(v, 0.0), static_cast<double>(H - 1));
  const double fu = std::floor(u);
  const double fv = std::floor(v);
  const double ax = u - fu;
  const double ay = v - fv;
  long long x0 = static_cast<long long>(fu) % W;
  if (x0 < 0) x0 += W;
  const long long x1 = (x0 + 1) % W;
  const long long y0 = static_cast<long long>(fv);
  const long long y1 = std::min(y0 + 1, H - 1);
  const T tx = static_cast<T>(ax);
  const T ty = static_cast<T>(ay);
  std::vector<T> out(f.channels());
  for (std::size_t c = 0; c < f.channels(); ++c) {
    const auto at = [&](long long y, long long x) { return f(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)); };
    const T a = at(y0, x0) + tx * (at(y0, x1) - at(y0, x0));
    const T b = at(y1, x0) + tx * (at(y1, x1) - at(y1, x0));
    out[c] = a + ty * (b - a);
  }
  return out;
}

PanoLidarImage encode_pointcloud(const std::vector<LidarPoint>& points, const AngularGridSpec& grid) {
  grid.validate();
  PanoLidarImage img(grid);
  const std::size_t plane = grid.rows * grid.cols;

  // (pixel, range, intensity, ambient, x, y, z, index); the first entry per pixel wins.
  using Key = std::tuple<std::size_t, double, double, double, double, double, double, std::size_t>;
  std::vector<Key> keys;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    img.has_ambient = img.has_ambient || p.ambient.has_value();
    const auto px = spherical_to_pixel(cart_to_spherical(p.position), grid);
    if (!px) {
      ++img.skipped_out_of_fov;
      continue;
    }
    long long col = static_cast<long long>(std::floor(px->u + 0.5));
    long long row = static_cast<long long>(std::floor(px->v + 0.5));
    col %= static_cast<long long>(grid.cols);
    row = std::min(row, static_cast<long long>(grid.rows) - 1);
    const auto pixel = static_cast<std::size_t>(row) * grid.cols + static_cast<std::size_t>(col);
    keys.emplace_back(pixel, norm(p.position), p.intensity, p.ambient.value_or(-1.0), p.position.x, p.position.y,
                      p.position.z, i);
  }
  std::sort(keys.begin(), keys.end());
  auto data = img.channels.data();
  for (std::size_t k = 0; k < keys.size(); ++k) {
    const std::size_t pixel = std::get<0>(keys[k]);
    if (k > 0 && std::get<0>(keys[k - 1]) == pixel) continue;
    const auto& pt = points[std::get<7>(keys[k])];
    img.mask[pixel] = 1;
    data[pixel] = norm(pt.position);
    data[plane + pixel] = pt.intensity;
    data[2 * plane + pixel] = pt.ambient.value_or(0.0);
  }
  return img;
}

template <typename T>
VoxelFeatures<T> voxel_pull(const FeatureMap<T>& image, const SparseVoxelSet& voxels, const AngularGridSpec& grid,
                            const PullOptions& options) {
  VoxelFeatures<T> out;
  out.set = voxels;
  out.channels = image.channels();
  for (const auto& center : voxels.centers) {
    const auto px = project(center, grid, options);
    out.out_of_fov.push_back(px ? 0 : 1);
    const auto s = px ? sample(image, px->u, px->v) : std::vector<T>(image.channels(), T{});
    out.values.insert(out.values.end(), s.begin(), s.end());
  }
  return out;
}

template <typename T>
FeatureMap<T> voxel_pull_backward(const std::vector<T>& grad, const SparseVoxelSet& voxels,
                                  const AngularGridSpec& grid, const Shape& image_shape, const PullOptions& options) {
  FeatureMap<T> out(image_shape);
  const std::size_t C = image_shape.channels;
  const auto H = static_cast<long long>(image_shape.height);
  const auto W = static_cast<long long>(image_shape.width);
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    const auto px = project(voxels.centers[i], grid, options);
    if (!px) continue;
    const double v = std::min(std::max(px->v, 0.0), static_cast<double>(H - 1));
    const double fu = std::floor(px->u);
    const double fv = std::floor(v);
    const double ax = px->u - fu;
    const double ay = v - fv;
    long long x0 = static_cast<long long>(fu) % W;
    if (x0 < 0) x0 += W;
    const long long x1 = (x0 + 1) % W;
    const long long y0 = static_cast<long long>(fv);
    const long long y1 = std::min(y0 + 1, H - 1);
    const double w00 = (1.0 - ax) * (1.0 - ay);
    const double w01 = ax * (1.0 - ay);
    const double w10 = (1.0 - ax) * ay;
    const double w11 = std::max(0.0, 1.0 - (w00 + w01 + w10));
    const std::array<std::tuple<long long, long long, double>, 4> taps{
        {{y0, x0, w00}, {y0, x1, w01}, {y1, x0, w10}, {y1, x1, w11}}};
    for (std::size_t c = 0; c < C; ++c)
      for (const auto& [y, x, w] : taps)
        out(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) += static_cast<T>(w) * grad[i * C + c];
  }
  return out;
}

template <typename T>
BevFeatureMap<T> vertical_compress(const VoxelFeatures<T>& vf, CompressMode mode) {
  const GridDims d = vf.set.spec.dims();
  const std::size_t C = vf.channels;
  std::vector<T> dense(d.z * d.y * d.x * C, T{});
  std::vector<std::uint8_t> filled(d.z * d.y * d.x, 0);
  for (std::size_t i = 0; i < vf.set.size(); ++i) {
    if (vf.out_of_fov[i]) continue;
    const auto& idx = vf.set.indices[i];
    const std::size_t cell = (idx.iz * d.y + idx.iy) * d.x + idx.ix;
    filled[cell] = 1;
    for (std::size_t c = 0; c < C; ++c) dense[cell * C + c] = vf.values[i * C + c];
  }
  BevFeatureMap<T> out{FeatureMap<T>(C, d.z, d.x), std::vector<std::uint32_t>(d.z * d.x, 0)};
  for (std::size_t iz = 0; iz < d.z; ++iz)
    for (std::size_t ix = 0; ix < d.x; ++ix) {
      std::uint32_t count = 0;
      for (std::size_t iy = 0; iy < d.y; ++iy) count += filled[(iz * d.y + iy) * d.x + ix];
      out.occupancy[iz * d.x + ix] = count;
      if (count == 0) continue;
      for (std::size_t c = 0; c < C; ++c) {
        T acc{};
        for (std::size_t iy = 0; iy < d.y; ++iy) {
          const std::size_t cell = (iz * d.y + iy) * d.x + ix;
          if (filled[cell]) acc += dense[cell * C + c];
        }
        out.features(c, iz, ix) = mode == CompressMode::mean ? acc / static_cast<T>(count) : acc;
      }
    }
  return out;
}

template <typename T>
BevFeatureMap<T> dense_grid_pull(const FeatureMap<T>& image, const VoxelGridSpec& spec, const AngularGridSpec& grid,
                                 CompressMode mode, const PullOptions& options) {
  const GridDims d = spec.dims();
  const std::size_t C = image.channels();
  BevFeatureMap<T> out{FeatureMap<T>(C, d.z, d.x), std::vector<std::uint32_t>(d.z * d.x, 0)};
  for (std::uint32_t iz = 0; iz < d.z; ++iz)
    for (std::uint32_t ix = 0; ix < d.x; ++ix) {
      std::vector<T> acc(C, T{});
      std::uint32_t count = 0;
      for (std::uint32_t iy = 0; iy < d.y; ++iy) {
        const auto px = project(spec.center({ix, iy, iz}), grid, options);
        if (!px) continue;
        const auto s = sample(image, px->u, px->v);
        for (std::size_t c = 0; c < C; ++c) acc[c] += s[c];
        ++count;
      }
      out.occupancy[iz * d.x + ix] = count;
      if (count == 0) continue;
      for (std::size_t c = 0; c < C; ++c)
        out.features(c, iz, ix) = mode == CompressMode::mean ? acc[c] / static_cast<T>(count) : acc[c];
    }
  return out;
}

template <typename T>
FeatureMap<T> sgfm_forward(const FeatureMap<T>& image, const FeatureMap<T>& lidar, const SgfmParams<T>& p) {
  const std::size_t C = p.channels;
  const std::size_t H = image.height();
  const std::size_t W = image.width();
  FeatureMap<T> fused(image.shape());
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t k = 0; k < C; ++k) {
        T a{};
        for (std::size_t j = 0; j < C; ++j) a += p.gate_weights[k * 2 * C + j] * image(j, y, x);
        for (std::size_t j = 0; j < C; ++j) a += p.gate_weights[k * 2 * C + C + j] * lidar(j, y, x);
        const T g = a >= T{0} ? T{1} / (T{1} + std::exp(-a)) : std::exp(a) / (T{1} + std::exp(a));
        const T fi = image(k, y, x);
        const T fl = lidar(k, y, x);
        fused(k, y, x) = std::clamp(g * fi + (T{1} - g) * fl, std::min(fi, fl), std::max(fi, fl));
      }

  const std::size_t Cin = p.refine_in_channels();
  FeatureMap<T> out(p.out_channels, H, W);
  for (std::size_t o = 0; o < p.out_channels; ++o) {
    const T inv = p.bn_scale[o] / std::sqrt(p.bn_var[o] + p.bn_eps);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        T acc{};
        for (std::size_t i = 0; i < Cin; ++i)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const long long yy = static_cast<long long>(y) + dy;
              long long xx = static_cast<long long>(x) + dx;
              if (yy < 0 || yy >= static_cast<long long>(H)) continue;
              if (xx < 0 || xx >= static_cast<long long>(W)) {
                if (p.padding == RefinePadding::zero) continue;
                xx = (xx + static_cast<long long>(W)) % static_cast<long long>(W);
              }
              acc += p.refine_weights[((o * Cin + i) * 3 + static_cast<std::size_t>(dy + 1)) * 3 +
                                      static_cast<std::size_t>(dx + 1)] *
                     fused(i % C, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            }
        const T v = (acc - p.bn_mean[o]) * inv + p.bn_shift[o];
        out(o, y, x) = v > T{0} ? v : T{0};
      }
  }
  return out;
}

double kl_channelwise(const FeatureMapD& teacher, const FeatureMapD& student, double temperature) {
  const std::size_t C = teacher.channels();
  const std::size_t n = teacher.shape().plane();
  const long double t = temperature;
  long double total = 0.0L;
  for (std::size_t c = 0; c < C; ++c) {
    const auto logp = [&](std::span<const double> z) {
      long double mx = z[0];
      for (const double v : z) mx = std::max<long double>(mx, v);
      long double s = 0.0L;
      for (const double v : z) s += std::exp((v - mx) / t);
      std::vector<long double> out(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) out[i] = (z[i] - mx) / t - std::log(s);
      return out;
    };
    const auto lt = logp(teacher.channel(c));
    const auto ls = logp(student.channel(c));
    for (std::size_t i = 0; i < n; ++i) total += std::exp(lt[i]) * (lt[i] - ls[i]);
  }
  return static_cast<double>(total * t * t / static_cast<long double>(C));
}

Rasterized rasterize_boxes(const std::vector<Box3D>& boxes, const BevGridSpec& spec) {
  Rasterized out{std::vector<std::uint8_t>(spec.rows * spec.cols, 0),
                 std::vector<std::int32_t>(spec.rows * spec.cols, -1)};
  for (std::size_t r = 0; r < spec.rows; ++r)
    for (std::size_t c = 0; c < spec.cols; ++c) {
      const auto xy = spec.cell_center(r, c);
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        const Box3D& box = boxes[b];
        const double cy = std::cos(box.yaw);
        const double sy = std::sin(box.yaw);
        const double dx = xy[0] - box.center.x;
        const double dy = xy[1] - box.center.y;
        if (std::abs(cy * dx + sy * dy) <= box.length / 2.0 && std::abs(-sy * dx + cy * dy) <= box.width / 2.0) {
          out.seg[r * spec.cols + c] = 1;
          out.instance[r * spec.cols + c] = static_cast<std::int32_t>(b);
        }
      }
    }
  return out;
}

std::vector<Box3D> filter_static_boxes(const std::vector<Box3D>& boxes, const std::vector<Vec3>& frame_cloud,
                                       std::int64_t frame_id, std::size_t min_points) {
  std::vector<Box3D> out;
  for (const auto& box : boxes) {
    if (box.kind == BoxKind::dynamic_object) {
      if (box.frame_id == frame_id) out.push_back(box);
      continue;
    }
    const auto hits = std::count_if(frame_cloud.begin(), frame_cloud.end(),
                                    [&](const Vec3& p) { return box_contains(p, box); });
    if (static_cast<std::size_t>(hits) >= min_points) out.push_back(box);
  }
  return out;
}

#define PANOBEV_INSTANTIATE(T)                                                                                     \
  template std::vector<T> sample<T>(const FeatureMap<T>&, double, double);                                        \
  template VoxelFeatures<T> voxel_pull<T>(const FeatureMap<T>&, const SparseVoxelSet&, const AngularGridSpec&,   \
                                          const PullOptions&);                                                     \
  template FeatureMap<T> voxel_pull_backward<T>(const std::vector<T>&, const SparseVoxelSet&,                      \
                                                const AngularGridSpec&, const Shape&, const PullOptions&);         \
  template BevFeatureMap<T> vertical_compress<T>(const VoxelFeatures<T>&, CompressMode);                           \
  template BevFeatureMap<T> dense_grid_pull<T>(const FeatureMap<T>&, const VoxelGridSpec&, const AngularGridSpec&, \
                                               CompressMode, const PullOptions&);                                  \
  template FeatureMap<T> sgfm_forward<T>(const FeatureMap<T>&, const FeatureMap<T>&, const SgfmParams<T>&);

PANOBEV_INSTANTIATE(float)
PANOBEV_INSTANTIATE(double)
#undef PANOBEV_INSTANTIATE

}  // namespace panobev::reference
