// SPDX-License-Identifier: Apache-2.0
#include "panobev/view_transformer.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include <omp.h>

#include "panobev/sampling.hpp"

namespace panobev {

namespace {

std::optional<PixelCoord> project_center(const Vec3& center, const AngularGridSpec& grid,
                                         const PullOptions& options) noexcept {
  return spherical_to_pixel(cart_to_spherical(options.sensor_to_camera.apply(center)), grid);
}

void check_image(const Shape& image, const AngularGridSpec& grid) {
  grid.validate();
  require(image.height == grid.rows && image.width == grid.cols, ErrorCode::shape_mismatch,
          "feature map " + to_string(image) + " does not match angular grid " + std::to_string(grid.rows) + "x" +
              std::to_string(grid.cols));
}

// Sums per-thread partial images in thread order.
template <typename T>
FeatureMap<T> reduce_partials(std::vector<FeatureMap<T>>& partials, const Shape& shape) {
  FeatureMap<T> out(shape);
  auto dst = out.data();
  const auto n = static_cast<long long>(shape.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    T acc{};
    for (auto& p : partials) {
      if (!p.empty()) acc += p.data()[i];
    }
    dst[i] = acc;
  }
  return out;
}

std::size_t column_of(const VoxelIndex& idx, const GridDims& d) noexcept {
  return static_cast<std::size_t>(idx.iz) * d.x + idx.ix;
}

}  // namespace

VoxelGridSpec VoxelGridSpec::from_full_extent(double x, double height, double z, double voxel) {
  VoxelGridSpec s;
  s.half_extent = {x / 2.0, height / 2.0, z / 2.0};
  s.voxel_size = {voxel, voxel, voxel};
  s.validate();
  return s;
}

void VoxelGridSpec::validate() const {
  for (int k = 0; k < 3; ++k) {
    require(std::isfinite(half_extent[k]) && half_extent[k] > 0 && std::isfinite(voxel_size[k]) && voxel_size[k] > 0,
            ErrorCode::invalid_config, "voxel grid extents and sizes must be positive");
    const double n = 2.0 * half_extent[k] / voxel_size[k];
    require(std::abs(n - std::round(n)) <= 1e-9 * std::max(1.0, n) && std::round(n) >= 1.0,
            ErrorCode::invalid_config, "2R/r must be a positive integer on every axis (got " + std::to_string(n) + ")");
  }
}

GridDims VoxelGridSpec::dims() const {
  validate();
  const auto n = [&](int k) { return static_cast<std::size_t>(std::llround(2.0 * half_extent[k] / voxel_size[k])); };
  return {n(0), n(1), n(2)};
}

Vec3 VoxelGridSpec::center(const VoxelIndex& idx) const noexcept {
  const double vx = -half_extent[0] + (idx.ix + 0.5) * voxel_size[0];
  const double vy = -half_extent[1] + (idx.iy + 0.5) * voxel_size[1];
  const double vz = -half_extent[2] + (idx.iz + 0.5) * voxel_size[2];
  return {vx, vz, vy};
}

SparseVoxelSet voxelize(const std::vector<Vec3>& points, const VoxelGridSpec& spec) {
  const GridDims d = spec.dims();
  constexpr std::uint64_t kOutside = ~std::uint64_t{0};
  std::vector<std::uint64_t> keys(points.size(), kOutside);
  const auto n = static_cast<long long>(points.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    const Vec3& p = points[i];
    const double coord[3] = {p.x, p.z, p.y};
    const std::size_t dim[3] = {d.x, d.y, d.z};
    std::size_t cell[3];
    bool inside = true;
    for (int k = 0; k < 3 && inside; ++k) {
      const double f = std::floor((coord[k] + spec.half_extent[k]) / spec.voxel_size[k]);
      inside = f >= 0.0 && f < static_cast<double>(dim[k]);
      if (inside) cell[k] = static_cast<std::size_t>(f);
    }
    if (inside) keys[i] = (static_cast<std::uint64_t>(cell[2]) * d.y + cell[1]) * d.x + cell[0];
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  if (!keys.empty() && keys.back() == kOutside) keys.pop_back();

  SparseVoxelSet out;
  out.spec = spec;
  out.indices.reserve(keys.size());
  out.centers.reserve(keys.size());
  for (const auto key : keys) {
    VoxelIndex idx;
    idx.ix = static_cast<std::uint32_t>(key % d.x);
    idx.iy = static_cast<std::uint32_t>((key / d.x) % d.y);
    idx.iz = static_cast<std::uint32_t>(key / (d.x * d.y));
    out.indices.push_back(idx);
    out.centers.push_back(spec.center(idx));
  }
  return out;
}

SparseVoxelSet full_voxel_set(const VoxelGridSpec& spec) {
  const GridDims d = spec.dims();
  SparseVoxelSet out;
  out.spec = spec;
  out.indices.reserve(d.x * d.y * d.z);
  for (std::uint32_t iz = 0; iz < d.z; ++iz)
    for (std::uint32_t iy = 0; iy < d.y; ++iy)
      for (std::uint32_t ix = 0; ix < d.x; ++ix) out.indices.push_back({ix, iy, iz});
  out.centers.reserve(out.indices.size());
  for (const auto& idx : out.indices) out.centers.push_back(spec.center(idx));
  return out;
}

template <typename T>
VoxelFeatures<T> voxel_pull(const FeatureMap<T>& image, const SparseVoxelSet& voxels, const AngularGridSpec& grid,
                            const PullOptions& options) {
  check_image(image.shape(), grid);
  require(voxels.centers.size() == voxels.indices.size(), ErrorCode::shape_mismatch,
          "voxel set centers/indices length mismatch");
  VoxelFeatures<T> out;
  out.set = voxels;
  out.channels = image.channels();
  out.values.assign(voxels.size() * out.channels, T{});
  out.out_of_fov.assign(voxels.size(), 0);

  const std::size_t C = out.channels;
  const auto n = static_cast<long long>(voxels.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    const auto px = project_center(voxels.centers[i], grid, options);
    if (!px) {
      out.out_of_fov[i] = 1;
      continue;
    }
    bilinear_sample<T>(image, px->u, px->v, std::span<T>(out.values).subspan(i * C, C));
  }
  return out;
}

template <typename T>
FeatureMap<T> voxel_pull_backward(std::span<const T> grad, const SparseVoxelSet& voxels,
                                  const AngularGridSpec& grid, const Shape& image_shape,
                                  const PullOptions& options) {
  check_image(image_shape, grid);
  const std::size_t C = image_shape.channels;
  require(grad.size() == voxels.size() * C, ErrorCode::shape_mismatch, "voxel gradient length must be N * C");

  std::vector<FeatureMap<T>> partials(static_cast<std::size_t>(omp_get_max_threads()));
  const auto n = static_cast<long long>(voxels.size());
#pragma omp parallel
  {
    auto& mine = partials[static_cast<std::size_t>(omp_get_thread_num())];
    mine = FeatureMap<T>(image_shape);
#pragma omp for schedule(static)
    for (long long i = 0; i < n; ++i) {
      const auto px = project_center(voxels.centers[i], grid, options);
      if (!px) continue;
      bilinear_scatter_add<T>(mine, px->u, px->v, grad.subspan(i * C, C));
    }
  }
  return reduce_partials(partials, image_shape);
}

template <typename T>
BevFeatureMap<T> vertical_compress(const VoxelFeatures<T>& vf, CompressMode mode) {
  const GridDims d = vf.set.spec.dims();
  const std::size_t C = vf.channels;
  const std::size_t columns = d.z * d.x;
  require(vf.values.size() == vf.set.size() * C && vf.out_of_fov.size() == vf.set.size(), ErrorCode::shape_mismatch,
          "voxel feature buffers do not match the voxel set");

  BevFeatureMap<T> out{FeatureMap<T>(C, d.z, d.x), std::vector<std::uint32_t>(columns, 0)};

  // Column -> voxel lists (CSR), voxels in ascending index order.
  std::vector<std::size_t> start(columns + 1, 0);
  for (std::size_t i = 0; i < vf.set.size(); ++i)
    if (!vf.out_of_fov[i]) ++start[column_of(vf.set.indices[i], d) + 1];
  for (std::size_t k = 0; k < columns; ++k) start[k + 1] += start[k];
  std::vector<std::size_t> members(start.back());
  {
    std::vector<std::size_t> cursor(start.begin(), start.end() - 1);
    for (std::size_t i = 0; i < vf.set.size(); ++i)
      if (!vf.out_of_fov[i]) members[cursor[column_of(vf.set.indices[i], d)]++] = i;
  }

  const std::size_t plane = columns;
  auto dst = out.features.data();
  const auto ncol = static_cast<long long>(columns);
#pragma omp parallel for schedule(static)
  for (long long k = 0; k < ncol; ++k) {
    const std::size_t count = start[k + 1] - start[k];
    out.occupancy[k] = static_cast<std::uint32_t>(count);
    if (count == 0) continue;
    for (std::size_t c = 0; c < C; ++c) {
      T acc{};
      for (std::size_t m = start[k]; m < start[k + 1]; ++m) acc += vf.values[members[m] * C + c];
      dst[c * plane + k] = mode == CompressMode::mean ? acc / static_cast<T>(count) : acc;
    }
  }
  return out;
}

template <typename T>
std::vector<T> vertical_compress_backward(const FeatureMap<T>& grad_bev, const VoxelFeatures<T>& vf,
                                          CompressMode mode) {
  const GridDims d = vf.set.spec.dims();
  const std::size_t C = vf.channels;
  require_same_shape(grad_bev.shape(), Shape{C, d.z, d.x}, "vertical_compress_backward");

  std::vector<std::uint32_t> occupancy(d.z * d.x, 0);
  for (std::size_t i = 0; i < vf.set.size(); ++i)
    if (!vf.out_of_fov[i]) ++occupancy[column_of(vf.set.indices[i], d)];

  std::vector<T> out(vf.set.size() * C, T{});
  const std::size_t plane = d.z * d.x;
  const auto src = grad_bev.data();
  const auto n = static_cast<long long>(vf.set.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    if (vf.out_of_fov[i]) continue;
    const std::size_t k = column_of(vf.set.indices[i], d);
    const T occ = static_cast<T>(occupancy[k]);
    for (std::size_t c = 0; c < C; ++c) {
      const T g = src[c * plane + k];
      out[i * C + c] = mode == CompressMode::mean ? g / occ : g;
    }
  }
  return out;
}

template <typename T>
BevFeatureMap<T> dense_grid_pull(const FeatureMap<T>& image, const VoxelGridSpec& spec, const AngularGridSpec& grid,
                                 CompressMode mode, const PullOptions& options) {
  check_image(image.shape(), grid);
  const GridDims d = spec.dims();
  const std::size_t C = image.channels();
  const std::size_t plane = d.z * d.x;
  BevFeatureMap<T> out{FeatureMap<T>(C, d.z, d.x), std::vector<std::uint32_t>(plane, 0)};
  auto dst = out.features.data();

  const auto ncol = static_cast<long long>(plane);
#pragma omp parallel
  {
    std::vector<T> acc(C);
    std::vector<T> sample(C);
#pragma omp for schedule(static)
    for (long long k = 0; k < ncol; ++k) {
      const auto iz = static_cast<std::uint32_t>(static_cast<std::size_t>(k) / d.x);
      const auto ix = static_cast<std::uint32_t>(static_cast<std::size_t>(k) % d.x);
      std::fill(acc.begin(), acc.end(), T{});
      std::uint32_t count = 0;
      for (std::uint32_t iy = 0; iy < d.y; ++iy) {
        const auto px = project_center(spec.center({ix, iy, iz}), grid, options);
        if (!px) continue;
        bilinear_sample<T>(image, px->u, px->v, sample);
        for (std::size_t c = 0; c < C; ++c) acc[c] += sample[c];
        ++count;
      }
      out.occupancy[k] = count;
      if (count == 0) continue;
      for (std::size_t c = 0; c < C; ++c)
        dst[c * plane + k] = mode == CompressMode::mean ? acc[c] / static_cast<T>(count) : acc[c];
    }
  }
  return out;
}

template <typename T>
FeatureMap<T> dense_grid_pull_backward(const FeatureMap<T>& grad_bev, const VoxelGridSpec& spec,
                                       const AngularGridSpec& grid, const Shape& image_shape, CompressMode mode,
                                       const PullOptions& options) {
  check_image(image_shape, grid);
  const GridDims d = spec.dims();
  const std::size_t C = image_shape.channels;
  require_same_shape(grad_bev.shape(), Shape{C, d.z, d.x}, "dense_grid_pull_backward");
  const std::size_t plane = d.z * d.x;
  const auto src = grad_bev.data();

  std::vector<FeatureMap<T>> partials(static_cast<std::size_t>(omp_get_max_threads()));
  const auto ncol = static_cast<long long>(plane);
#pragma omp parallel
  {
    auto& mine = partials[static_cast<std::size_t>(omp_get_thread_num())];
    mine = FeatureMap<T>(image_shape);
    std::vector<PixelCoord> hits;
    std::vector<T> g(C);
#pragma omp for schedule(static)
    for (long long k = 0; k < ncol; ++k) {
      const auto iz = static_cast<std::uint32_t>(static_cast<std::size_t>(k) / d.x);
      const auto ix = static_cast<std::uint32_t>(static_cast<std::size_t>(k) % d.x);
      hits.clear();
      for (std::uint32_t iy = 0; iy < d.y; ++iy)
        if (const auto px = project_center(spec.center({ix, iy, iz}), grid, options)) hits.push_back(*px);
      if (hits.empty()) continue;
      const T occ = static_cast<T>(hits.size());
      for (std::size_t c = 0; c < C; ++c) g[c] = mode == CompressMode::mean ? src[c * plane + k] / occ : src[c * plane + k];
      for (const auto& px : hits) bilinear_scatter_add<T>(mine, px.u, px.v, g);
    }
  }
  return reduce_partials(partials, image_shape);
}

#define PANOBEV_INSTANTIATE(T)                                                                                     \
  template VoxelFeatures<T> voxel_pull<T>(const FeatureMap<T>&, const SparseVoxelSet&, const AngularGridSpec&,   \
                                          const PullOptions&);                                                     \
  template FeatureMap<T> voxel_pull_backward<T>(std::span<const T>, const SparseVoxelSet&, const AngularGridSpec&, \
                                                const Shape&, const PullOptions&);                                 \
  template BevFeatureMap<T> vertical_compress<T>(const VoxelFeatures<T>&, CompressMode);                           \
  template std::vector<T> vertical_compress_backward<T>(const FeatureMap<T>&, const VoxelFeatures<T>&,             \
                                                        CompressMode);                                             \
  template BevFeatureMap<T> dense_grid_pull<T>(const FeatureMap<T>&, const VoxelGridSpec&, const AngularGridSpec&, \
                                               CompressMode, const PullOptions&);                                  \
  template FeatureMap<T> dense_grid_pull_backward<T>(const FeatureMap<T>&, const VoxelGridSpec&,                   \
                                                     const AngularGridSpec&, const Shape&, CompressMode,           \
                                                     const PullOptions&);

PANOBEV_INSTANTIATE(float)
PANOBEV_INSTANTIATE(double)
#undef PANOBEV_INSTANTIATE

}  // namespace panobev
