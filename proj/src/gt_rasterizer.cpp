// SPDX-License-Identifier: Apache-2.0
#include "panobev/gt_rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <regex>
#include <sstream>

namespace panobev {

namespace {

struct Centroid {
  double row = 0.0;
  double col = 0.0;
};

// Footprint centroids in cell units, keyed by instance id.
std::map<std::int32_t, Centroid> instance_centroids(const std::vector<std::int32_t>& instance,
                                                    const BevGridSpec& spec) {
  std::map<std::int32_t, std::array<double, 3>> sums;
  for (std::size_t r = 0; r < spec.rows; ++r)
    for (std::size_t c = 0; c < spec.cols; ++c) {
      const auto id = instance[r * spec.cols + c];
      if (id < 0) continue;
      auto& s = sums[id];
      s[0] += static_cast<double>(r);
      s[1] += static_cast<double>(c);
      s[2] += 1.0;
    }
  std::map<std::int32_t, Centroid> out;
  for (const auto& [id, s] : sums) out[id] = {s[0] / s[2], s[1] / s[2]};
  return out;
}

void check_instance_map(const std::vector<std::int32_t>& instance, const BevGridSpec& spec) {
  spec.validate();
  require(instance.size() == spec.rows * spec.cols, ErrorCode::shape_mismatch, "instance map does not match BEV grid");
}

}  // namespace

BevGridSpec BevGridSpec::parse(const std::string& text) {
  static const std::regex re(R"(^\s*(\d+)x(\d+)@([0-9]*\.?[0-9]+)m?\s*$)");
  std::smatch m;
  require(std::regex_match(text, m, re), ErrorCode::parse, "BEV grid spec must look like 200x200@100m, got '" + text + "'");
  BevGridSpec s{std::stoul(m[1]), std::stoul(m[2]), std::stod(m[3])};
  s.validate();
  return s;
}

void BevGridSpec::validate() const {
  require(rows >= 1 && cols >= 1 && std::isfinite(extent) && extent > 0, ErrorCode::invalid_config,
          "BEV grid needs rows, cols >= 1 and a positive extent");
  require(rows == cols, ErrorCode::invalid_config, "BEV grid must be square (rows * meters_per_cell == extent)");
}

std::array<double, 2> BevGridSpec::cell_center(std::size_t row, std::size_t col) const noexcept {
  const double m = meters_per_cell();
  return {-extent / 2.0 + (static_cast<double>(col) + 0.5) * m, -extent / 2.0 + (static_cast<double>(row) + 0.5) * m};
}

Rasterized rasterize_boxes(const std::vector<Box3D>& boxes, const BevGridSpec& spec) {
  spec.validate();
  Rasterized out{std::vector<std::uint8_t>(spec.rows * spec.cols, 0),
                 std::vector<std::int32_t>(spec.rows * spec.cols, -1)};
  const double m = spec.meters_per_cell();
  const double half = spec.extent / 2.0;

  for (std::size_t b = 0; b < boxes.size(); ++b) {
    const Box3D& box = boxes[b];
    const double cy = std::cos(box.yaw);
    const double sy = std::sin(box.yaw);
    const double hl = box.length / 2.0;
    const double hw = box.width / 2.0;
    const double rx = std::abs(cy) * hl + std::abs(sy) * hw;
    const double ry = std::abs(sy) * hl + std::abs(cy) * hw;
    // Candidate cell range, padded by one cell; containment is tested exactly.
    const auto lo = [&](double v) { return static_cast<long long>(std::floor((v + half) / m - 0.5)) - 1; };
    const auto hi = [&](double v) { return static_cast<long long>(std::ceil((v + half) / m - 0.5)) + 1; };
    const long long c0 = std::max(0LL, lo(box.center.x - rx));
    const long long c1 = std::min(static_cast<long long>(spec.cols) - 1, hi(box.center.x + rx));
    const long long r0 = std::max(0LL, lo(box.center.y - ry));
    const long long r1 = std::min(static_cast<long long>(spec.rows) - 1, hi(box.center.y + ry));
    if (c0 > c1 || r0 > r1) continue;

#pragma omp parallel for schedule(static)
    for (long long r = r0; r <= r1; ++r) {
      for (long long c = c0; c <= c1; ++c) {
        const auto xy = spec.cell_center(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
        const double dx = xy[0] - box.center.x;
        const double dy = xy[1] - box.center.y;
        const double lx = cy * dx + sy * dy;
        const double ly = -sy * dx + cy * dy;
        if (std::abs(lx) <= hl && std::abs(ly) <= hw) {
          const std::size_t i = static_cast<std::size_t>(r) * spec.cols + static_cast<std::size_t>(c);
          out.seg[i] = 1;
          out.instance[i] = static_cast<std::int32_t>(b);
        }
      }
    }
  }
  return out;
}

std::vector<float> make_centerness(const std::vector<std::int32_t>& instance, const BevGridSpec& spec,
                                   double sigma_cells) {
  check_instance_map(instance, spec);
  require(std::isfinite(sigma_cells) && sigma_cells > 0, ErrorCode::invalid_config, "sigma_cells must be positive");
  const auto centroids = instance_centroids(instance, spec);
  std::vector<Centroid> list;
  for (const auto& [id, c] : centroids) list.push_back(c);

  std::vector<float> out(spec.rows * spec.cols, 0.0f);
  if (list.empty()) return out;
  const double inv = 1.0 / (2.0 * sigma_cells * sigma_cells);
  const auto rows = static_cast<long long>(spec.rows);
#pragma omp parallel for schedule(static)
  for (long long r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < spec.cols; ++c) {
      double best = 0.0;
      for (const auto& k : list) {
        const double dr = static_cast<double>(r) - k.row;
        const double dc = static_cast<double>(c) - k.col;
        best = std::max(best, std::exp(-(dr * dr + dc * dc) * inv));
      }
      out[static_cast<std::size_t>(r) * spec.cols + c] = static_cast<float>(best);
    }
  }
  return out;
}

OffsetTargets make_offset(const std::vector<std::int32_t>& instance, const BevGridSpec& spec) {
  check_instance_map(instance, spec);
  const auto centroids = instance_centroids(instance, spec);
  OffsetTargets out{FeatureMapF(2, spec.rows, spec.cols), std::vector<std::uint8_t>(spec.rows * spec.cols, 0)};
  const double m = spec.meters_per_cell();
  for (std::size_t r = 0; r < spec.rows; ++r)
    for (std::size_t c = 0; c < spec.cols; ++c) {
      const auto id = instance[r * spec.cols + c];
      if (id < 0) continue;
      const auto& k = centroids.at(id);
      out.offset(0, r, c) = static_cast<float>((k.col - static_cast<double>(c)) * m);
      out.offset(1, r, c) = static_cast<float>((k.row - static_cast<double>(r)) * m);
      out.valid[r * spec.cols + c] = 1;
    }
  return out;
}

FeatureMapF make_bev_targets(const std::vector<Box3D>& boxes, const BevGridSpec& spec, double sigma_cells) {
  const auto raster = rasterize_boxes(boxes, spec);
  const auto centerness = make_centerness(raster.instance, spec, sigma_cells);
  const auto offset = make_offset(raster.instance, spec);
  FeatureMapF out(5, spec.rows, spec.cols);
  const std::size_t plane = spec.rows * spec.cols;
  auto d = out.data();
  for (std::size_t i = 0; i < plane; ++i) {
    d[i] = raster.seg[i];
    d[plane + i] = centerness[i];
    d[2 * plane + i] = offset.offset.data()[i];
    d[3 * plane + i] = offset.offset.data()[plane + i];
    d[4 * plane + i] = offset.valid[i];
  }
  return out;
}

bool box_contains(const Vec3& point, const Box3D& box) noexcept {
  const double cy = std::cos(box.yaw);
  const double sy = std::sin(box.yaw);
  const Vec3 d = point - box.center;
  const double lx = cy * d.x + sy * d.y;
  const double ly = -sy * d.x + cy * d.y;
  return std::abs(lx) <= box.length / 2.0 && std::abs(ly) <= box.width / 2.0 && std::abs(d.z) <= box.height / 2.0;
}

std::vector<Box3D> filter_static_boxes(const std::vector<Box3D>& boxes, const std::vector<Vec3>& frame_cloud,
                                       std::int64_t frame_id, const FilterOptions& options) {
  for (std::size_t b = 0; b < boxes.size(); ++b)
    require(boxes[b].kind == BoxKind::static_object || boxes[b].frame_id.has_value(), ErrorCode::missing_frame_id,
            "dynamic box " + std::to_string(b) + " has no frame id");

  std::vector<std::uint8_t> keep(boxes.size(), 0);
  const auto n = static_cast<long long>(boxes.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long long b = 0; b < n; ++b) {
    const Box3D& box = boxes[b];
    if (box.kind == BoxKind::dynamic_object) {
      keep[b] = *box.frame_id == frame_id;
      continue;
    }
    std::size_t hits = 0;
    for (const auto& p : frame_cloud) {
      if (box_contains(p, box) && ++hits >= options.min_points) break;
    }
    keep[b] = hits >= options.min_points;
  }
  std::vector<Box3D> out;
  for (std::size_t b = 0; b < boxes.size(); ++b)
    if (keep[b]) out.push_back(boxes[b]);
  return out;
}

std::vector<Box3D> filter_static_boxes_by_distance(const std::vector<Box3D>& boxes, std::int64_t frame_id,
                                                   double max_distance) {
  std::vector<Box3D> out;
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    const Box3D& box = boxes[b];
    if (box.kind == BoxKind::dynamic_object) {
      require(box.frame_id.has_value(), ErrorCode::missing_frame_id,
              "dynamic box " + std::to_string(b) + " has no frame id");
      if (*box.frame_id == frame_id) out.push_back(box);
    } else if (std::hypot(box.center.x, box.center.y) <= max_distance) {
      out.push_back(box);
    }
  }
  return out;
}

std::vector<Box3D> read_boxes(std::istream& is) {
  std::vector<Box3D> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    Box3D b;
    const auto where = "boxes line " + std::to_string(lineno);
    if (kind == "static") {
      b.kind = BoxKind::static_object;
    } else if (kind == "dynamic") {
      b.kind = BoxKind::dynamic_object;
    } else {
      fail(ErrorCode::parse, where + ": kind must be 'static' or 'dynamic', got '" + kind + "'");
    }
    if (!(ls >> b.category >> b.center.x >> b.center.y >> b.center.z >> b.length >> b.width >> b.height >> b.yaw))
      fail(ErrorCode::parse, where + ": expected `kind category cx cy cz l w h yaw [frame_id]`");
    std::int64_t frame = 0;
    if (ls >> frame) b.frame_id = frame;
    std::string rest;
    require(!(ls >> rest), ErrorCode::parse, where + ": trailing fields");
    require(b.length > 0 && b.width > 0 && b.height > 0, ErrorCode::parse, where + ": box dims must be positive");
    out.push_back(std::move(b));
  }
  return out;
}

void write_boxes(std::ostream& os, const std::vector<Box3D>& boxes) {
  const auto old = os.precision(17);
  for (const auto& b : boxes) {
    os << (b.kind == BoxKind::static_object ? "static" : "dynamic") << ' ' << b.category << ' ' << b.center.x << ' '
       << b.center.y << ' ' << b.center.z << ' ' << b.length << ' ' << b.width << ' ' << b.height << ' ' << b.yaw;
    if (b.frame_id) os << ' ' << *b.frame_id;
    os << '\n';
  }
  os.precision(old);
}

}  // namespace panobev
