// SPDX-License-Identifier: Apache-2.0
//
// Serial reference kernels against the OpenMP ones. The parallel variants take
// the thread count as the benchmark argument.
#include <benchmark/benchmark.h>

#include <random>

#include "panobev/fusion.hpp"
#include "panobev/gt_rasterizer.hpp"
#include "panobev/lidar_image.hpp"
#include "panobev/parallel.hpp"
#include "panobev/view_transformer.hpp"
#include "reference/reference.hpp"

using namespace panobev;

namespace {

const AngularGridSpec kPano{64, 1024, -0.45, 0.25};
const VoxelGridSpec kGrid = VoxelGridSpec::from_full_extent(100, 8, 100, 0.5);

struct Fixture {
  FeatureMapF image{8, kPano.rows, kPano.cols};
  std::vector<LidarPoint> cloud;
  SparseVoxelSet voxels;
  FeatureMapF bev_img{8, 200, 200}, bev_lidar{8, 200, 200};
  SgfmParams<float> params = SgfmParams<float>::zeros(8, 8);
  std::vector<Box3D> boxes;

  Fixture() {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    for (auto& v : image.data()) v = unit(rng);
    cloud.resize(120000);
    std::vector<Vec3> pts;
    for (auto& p : cloud) {
      const double el = kPano.elevation_min + unit(rng) * kPano.elevation_span();
      p.position = spherical_to_cart({unit(rng) * kTwoPi - kPi, el, 2.0 + 60.0 * unit(rng)});
      p.intensity = unit(rng);
      pts.push_back(p.position);
    }
    voxels = voxelize(pts, kGrid);
    for (auto& v : bev_img.data()) v = unit(rng);
    for (auto& v : bev_lidar.data()) v = unit(rng);
    for (auto& w : params.gate_weights) w = unit(rng) - 0.5f;
    for (auto& w : params.refine_weights) w = (unit(rng) - 0.5f) * 0.1f;
    boxes.resize(60);
    for (auto& b : boxes) {
      b.center = {unit(rng) * 90 - 45, unit(rng) * 90 - 45, 0};
      b.length = 2 + 4 * unit(rng);
      b.width = 1 + 1.5 * unit(rng);
      b.height = 1.5;
      b.yaw = unit(rng) * kTwoPi;
    }
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void threads_arg(benchmark::internal::Benchmark* b) {
  for (int t = 1; t <= std::max(1, max_threads()); t *= 2) b->Arg(t);
}

void BM_VoxelPull_Reference(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(reference::voxel_pull(f.image, f.voxels, kPano));
}
BENCHMARK(BM_VoxelPull_Reference)->Unit(benchmark::kMillisecond);

void BM_VoxelPull_Parallel(benchmark::State& state) {
  const auto& f = fixture();
  ThreadCountGuard guard(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(voxel_pull(f.image, f.voxels, kPano));
}
BENCHMARK(BM_VoxelPull_Parallel)->Apply(threads_arg)->Unit(benchmark::kMillisecond);

void BM_DenseGridPull_Reference(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(reference::dense_grid_pull(f.image, kGrid, kPano));
}
BENCHMARK(BM_DenseGridPull_Reference)->Unit(benchmark::kMillisecond);

void BM_DenseGridPull_Parallel(benchmark::State& state) {
  const auto& f = fixture();
  ThreadCountGuard guard(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(dense_grid_pull(f.image, kGrid, kPano));
}
BENCHMARK(BM_DenseGridPull_Parallel)->Apply(threads_arg)->Unit(benchmark::kMillisecond);

void BM_Encode_Reference(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(reference::encode_pointcloud(f.cloud, kPano));
}
BENCHMARK(BM_Encode_Reference)->Unit(benchmark::kMillisecond);

void BM_Encode_Parallel(benchmark::State& state) {
  const auto& f = fixture();
  ThreadCountGuard guard(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(encode_pointcloud(f.cloud, kPano));
}
BENCHMARK(BM_Encode_Parallel)->Apply(threads_arg)->Unit(benchmark::kMillisecond);

void BM_Sgfm_Reference(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(reference::sgfm_forward(f.bev_img, f.bev_lidar, f.params));
}
BENCHMARK(BM_Sgfm_Reference)->Unit(benchmark::kMillisecond);

void BM_Sgfm_Parallel(benchmark::State& state) {
  const auto& f = fixture();
  ThreadCountGuard guard(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(sgfm_forward(f.bev_img, f.bev_lidar, f.params));
}
BENCHMARK(BM_Sgfm_Parallel)->Apply(threads_arg)->Unit(benchmark::kMillisecond);

void BM_Rasterize_Reference(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(reference::rasterize_boxes(f.boxes, BevGridSpec{}));
}
BENCHMARK(BM_Rasterize_Reference)->Unit(benchmark::kMillisecond);

void BM_Rasterize_Parallel(benchmark::State& state) {
  const auto& f = fixture();
  ThreadCountGuard guard(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(rasterize_boxes(f.boxes, BevGridSpec{}));
}
BENCHMARK(BM_Rasterize_Parallel)->Apply(threads_arg)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
