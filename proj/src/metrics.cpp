// SPDX-License-Identifier: Apache-2.0
#include "panobev/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

namespace panobev {

std::size_t crop_cells(const BevGridSpec& spec, double side_m) {
  spec.validate();
  require(std::isfinite(side_m) && side_m > 0 && side_m <= spec.extent * (1.0 + 1e-12), ErrorCode::invalid_config,
          "crop side must be in (0, extent]");
  const auto n = static_cast<std::size_t>(std::llround(side_m / spec.meters_per_cell()));
  return std::clamp<std::size_t>(n, 1, spec.rows);
}

IouResult range_iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, const BevGridSpec& spec,
                    double side_m) {
  require(pred.size() == gt.size() && pred.size() == spec.rows * spec.cols, ErrorCode::shape_mismatch,
          "range_iou masks must both be rows x cols");
  const std::size_t n = crop_cells(spec, side_m);
  const std::size_t r0 = (spec.rows - n) / 2;
  const std::size_t c0 = (spec.cols - n) / 2;
  IouResult r;
  for (std::size_t y = r0; y < r0 + n; ++y)
    for (std::size_t x = c0; x < c0 + n; ++x) {
      const bool p = pred[y * spec.cols + x] != 0;
      const bool g = gt[y * spec.cols + x] != 0;
      r.intersection += p && g;
      r.union_count += p || g;
    }
  if (r.union_count == 0) {
    r.empty_union = true;
    r.iou = 1.0;
  } else {
    r.iou = static_cast<double>(r.intersection) / static_cast<double>(r.union_count);
  }
  return r;
}

double efficiency_ratio(double iou_percent, double parameter_count) {
  require(std::isfinite(parameter_count) && parameter_count > 0, ErrorCode::invalid_config,
          "parameter count must be positive");
  return iou_percent / (parameter_count / 1e6);
}

BenchResult throughput_bench(const std::function<void()>& op, std::size_t warmup, std::size_t iters) {
  require(iters >= 1, ErrorCode::invalid_config, "bench needs at least one timed iteration");
  using clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < warmup; ++i) op();
  std::vector<double> ms(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = clock::now();
    op();
    ms[i] = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  }
  BenchResult r;
  r.iterations = iters;
  for (const double v : ms) r.mean_ms += v;
  r.mean_ms /= static_cast<double>(iters);
  for (const double v : ms) r.stdev_ms += (v - r.mean_ms) * (v - r.mean_ms);
  r.stdev_ms = std::sqrt(r.stdev_ms / static_cast<double>(iters));
  r.fps = r.mean_ms > 0.0 ? 1000.0 / r.mean_ms : std::numeric_limits<double>::infinity();
  return r;
}

EvalReport evaluate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, const BevGridSpec& spec,
                    std::optional<double> parameter_count) {
  EvalReport r;
  const auto full = range_iou(pred, gt, spec, spec.extent);
  r.iou100 = full.iou;
  r.empty_union = full.empty_union;
  r.iou50 = range_iou(pred, gt, spec, std::min(50.0, spec.extent)).iou;
  r.iou20 = range_iou(pred, gt, spec, std::min(20.0, spec.extent)).iou;
  if (parameter_count) r.er = efficiency_ratio(100.0 * r.iou100, *parameter_count);
  return r;
}

void write_report(std::ostream& os, const EvalReport& r) {
  const auto opt = [&](const char* key, const std::optional<double>& v) {
    os << key << '=';
    if (v)
      os << *v;
    else
      os << "n/a";
    os << '\n';
  };
  os << "iou100=" << r.iou100 << '\n' << "iou50=" << r.iou50 << '\n' << "iou20=" << r.iou20 << '\n';
  opt("er", r.er);
  opt("fps", r.fps);
  opt("latency_ms", r.latency_ms);
  os << "empty_union=" << (r.empty_union ? 1 : 0) << '\n';
}

}  // namespace panobev
