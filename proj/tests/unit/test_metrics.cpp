// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <sstream>
#include <thread>

#include "panobev/metrics.hpp"
#include "support.hpp"

using namespace panobev;

namespace {

std::vector<std::uint8_t> square(std::size_t n, std::size_t r0, std::size_t c0, std::size_t side) {
  std::vector<std::uint8_t> m(n * n, 0);
  for (std::size_t r = r0; r < r0 + side; ++r)
    for (std::size_t c = c0; c < c0 + side; ++c) m[r * n + c] = 1;
  return m;
}

}  // namespace

TEST_CASE("crop sizes nest") {
  const BevGridSpec spec{};
  CHECK(crop_cells(spec, 100) == 200);
  CHECK(crop_cells(spec, 50) == 100);
  CHECK(crop_cells(spec, 20) == 40);
  CHECK_THROWS_AS(crop_cells(spec, 120), Error);
  CHECK_THROWS_AS(crop_cells(spec, 0), Error);
}

TEST_CASE("IoU set arithmetic") {
  const BevGridSpec spec{};
  const auto a = square(200, 90, 90, 10);
  CHECK(range_iou(a, a, spec, 100).iou == 1.0);
  CHECK(range_iou(a, square(200, 120, 120, 10), spec, 100).iou == 0.0);

  auto covers = a;
  for (std::size_t r = 60; r < 70; ++r)
    for (std::size_t c = 60; c < 70; ++c) covers[r * 200 + c] = 1;
  CHECK(range_iou(covers, a, spec, 100).iou == 0.5);

  const std::vector<std::uint8_t> empty(200 * 200, 0);
  const auto r = range_iou(empty, empty, spec, 100);
  CHECK(r.iou == 1.0);
  CHECK(r.empty_union);
  CHECK_THROWS_AS(range_iou(a, std::vector<std::uint8_t>(10), spec, 100), Error);
}

TEST_CASE("crops only see the central window") {
  const BevGridSpec spec{};
  // A blob far out is visible in the full map only.
  auto pred = square(200, 98, 98, 4);
  auto gt = pred;
  for (std::size_t r = 5; r < 15; ++r)
    for (std::size_t c = 5; c < 15; ++c) pred[r * 200 + c] = 1;
  CHECK(range_iou(pred, gt, spec, 100).iou < 1.0);
  CHECK(range_iou(pred, gt, spec, 50).iou == 1.0);
  CHECK(range_iou(pred, gt, spec, 20).iou == 1.0);
  // Cells 80..119 form the 20 m window; 79 is outside it.
  CHECK(range_iou(square(200, 79, 79, 1), std::vector<std::uint8_t>(40000, 0), spec, 20).empty_union);
  CHECK_FALSE(range_iou(square(200, 80, 80, 1), std::vector<std::uint8_t>(40000, 0), spec, 20).empty_union);
}

TEST_CASE("IoU is symmetric and monotone under removing true positives") {
  test::Rng rng(1);
  const BevGridSpec spec{40, 40, 20.0};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::uint8_t> p(1600), g(1600);
    for (std::size_t i = 0; i < 1600; ++i) {
      g[i] = rng.coin(0.3);
      p[i] = rng.coin(0.3);
    }
    for (const double side : {20.0, 10.0, 4.0}) {
      const double iou = range_iou(p, g, spec, side).iou;
      CHECK(iou == range_iou(g, p, spec, side).iou);
      CHECK(iou >= 0.0);
      CHECK(iou <= 1.0);
    }
    double prev = range_iou(p, g, spec, 20).iou;
    for (std::size_t i = 0; i < 1600; ++i) {
      if (!(p[i] && g[i])) continue;
      p[i] = 0;
      const double now = range_iou(p, g, spec, 20).iou;
      CHECK(now <= prev);
      prev = now;
    }
  }
}

TEST_CASE("efficiency ratio") {
  CHECK(std::abs(efficiency_ratio(32.2, 10.59e6) - 3.04) <= 0.02);
  CHECK(efficiency_ratio(0.0, 5e6) == 0.0);
  CHECK(efficiency_ratio(40.0, 8e6) == doctest::Approx(2 * efficiency_ratio(40.0, 16e6)).epsilon(1e-15));
  CHECK_THROWS_AS(efficiency_ratio(30.0, 0.0), Error);
  CHECK_THROWS_AS(efficiency_ratio(30.0, -1.0), Error);
}

TEST_CASE("throughput harness") {
  CHECK(kDefaultBenchIterations == 20);
  std::size_t calls = 0;
  const auto r = throughput_bench([&] { ++calls; });
  CHECK(calls == 23);
  CHECK(r.iterations == 20);
  CHECK(r.fps > 1e4);
  CHECK(r.fps * r.mean_ms == doctest::Approx(1000.0).epsilon(1e-12));

  const auto slow = throughput_bench([] { std::this_thread::sleep_for(std::chrono::milliseconds(2)); }, 0, 3);
  CHECK(slow.mean_ms >= 2.0);
  CHECK(slow.stdev_ms >= 0.0);
  CHECK_THROWS_AS(throughput_bench([] {}, 0, 0), Error);
}

TEST_CASE("evaluation report") {
  const BevGridSpec spec{};
  const auto a = square(200, 95, 95, 10);
  auto rep = evaluate(a, a, spec, 10.59e6);
  CHECK(rep.iou100 == 1.0);
  CHECK(rep.iou50 == 1.0);
  CHECK(rep.iou20 == 1.0);
  REQUIRE(rep.er);
  CHECK(*rep.er == doctest::Approx(100.0 / 10.59));

  std::ostringstream os;
  write_report(os, rep);
  const auto text = os.str();
  CHECK(text.find("iou100=1") != std::string::npos);
  CHECK(text.find("iou50=1") != std::string::npos);
  CHECK(text.find("er=") != std::string::npos);

  rep = evaluate(a, a, spec);
  CHECK_FALSE(rep.er);
}
