// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>

#include "panobev/gt_rasterizer.hpp"

namespace panobev {

struct IouResult {
  double iou = 0.0;
  bool empty_union = false;  // both crops empty; iou is reported as 1
  std::size_t intersection = 0;
  std::size_t union_count = 0;
};

/// Side length in cells of the centered crop for `side_m` meters.
std::size_t crop_cells(const BevGridSpec& spec, double side_m);

/// IoU of the centered `side_m` x `side_m` crop of two rows x cols masks.
IouResult range_iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, const BevGridSpec& spec,
                    double side_m);

/// IoU percent per million parameters.
double efficiency_ratio(double iou_percent, double parameter_count);

struct BenchResult {
  double mean_ms = 0.0;
  double stdev_ms = 0.0;
  double fps = 0.0;
  std::size_t iterations = 0;
};

inline constexpr std::size_t kDefaultBenchIterations = 20;

/// Times `op` for `iters` runs after `warmup` untimed runs; fps = 1000 / mean_ms.
BenchResult throughput_bench(const std::function<void()>& op, std::size_t warmup = 3,
                             std::size_t iters = kDefaultBenchIterations);

struct EvalReport {
  double iou100 = 0.0;
  double iou50 = 0.0;
  double iou20 = 0.0;
  std::optional<double> er;
  std::optional<double> fps;
  std::optional<double> latency_ms;
  bool empty_union = false;
};

EvalReport evaluate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, const BevGridSpec& spec,
                    std::optional<double> parameter_count = std::nullopt);

/// Flat `key=value` lines.
void write_report(std::ostream& os, const EvalReport& r);

}  // namespace panobev
