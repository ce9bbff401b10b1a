// SPDX-License-Identifier: Apache-2.0
#include "panobev/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace panobev::io {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  require(is.gcount() == 4, ErrorCode::io, std::string("truncated ") + what);
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

void put_f32s(std::ostream& os, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
  } else {
    for (const float v : values) put_f32(os, v);
  }
}

void get_f32s(std::istream& is, std::span<float> values, const char* what) {
  const auto bytes = static_cast<std::streamsize>(values.size() * 4);
  is.read(reinterpret_cast<char*>(values.data()), bytes);
  require(is.gcount() == bytes, ErrorCode::io, std::string("truncated ") + what + " payload");
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : values) {
      const auto u = std::bit_cast<std::uint32_t>(v);
      v = std::bit_cast<float>((u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24));
    }
  }
}

void expect_magic(std::istream& is, const char* magic, const char* what) {
  char m[4] = {};
  is.read(m, 4);
  require(is.gcount() == 4 && std::memcmp(m, magic, 4) == 0, ErrorCode::parse,
          std::string("bad ") + what + " magic (expected \"" + magic + "\")");
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  require(v <= 0xffffffffu, ErrorCode::invalid_config, std::string(what) + " exceeds u32");
  return static_cast<std::uint32_t>(v);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::io, "cannot open " + path.string() + " for writing");
  return f;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::io, "cannot open " + path.string());
  return f;
}

void finish(std::ostream& os, const std::filesystem::path& path) {
  os.flush();
  require(os.good(), ErrorCode::io, "write failed for " + path.string());
}

}  // namespace

void write_fmap(std::ostream& os, const FeatureMapF& f) {
  os.write("FMAP", 4);
  put_u32(os, checked_u32(f.channels(), "channels"));
  put_u32(os, checked_u32(f.height(), "height"));
  put_u32(os, checked_u32(f.width(), "width"));
  put_f32s(os, f.data());
}

FeatureMapF read_fmap(std::istream& is) {
  expect_magic(is, "FMAP", "feature map");
  const Shape s{get_u32(is, "fmap header"), get_u32(is, "fmap header"), get_u32(is, "fmap header")};
  FeatureMapF f(s);
  get_f32s(is, f.data(), "fmap");
  return f;
}

void write_fmap(const std::filesystem::path& path, const FeatureMapF& f) {
  auto os = open_out(path);
  write_fmap(os, f);
  finish(os, path);
}

FeatureMapF read_fmap(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_fmap(is);
}

void write_plx(std::ostream& os, const std::vector<LidarPoint>& points) {
  const bool ambient = std::any_of(points.begin(), points.end(), [](const LidarPoint& p) { return p.ambient.has_value(); });
  const std::uint32_t stride = ambient ? 5 : 4;
  os.write("PLX1", 4);
  put_u32(os, stride);
  put_u32(os, checked_u32(points.size(), "point count"));
  std::vector<float> rec(points.size() * stride);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    float* r = rec.data() + i * stride;
    r[0] = static_cast<float>(p.position.x);
    r[1] = static_cast<float>(p.position.y);
    r[2] = static_cast<float>(p.position.z);
    r[3] = static_cast<float>(p.intensity);
    if (ambient) r[4] = static_cast<float>(p.ambient.value_or(0.0));
  }
  put_f32s(os, rec);
}

std::vector<LidarPoint> read_plx(std::istream& is) {
  expect_magic(is, "PLX1", "point cloud");
  const std::uint32_t stride = get_u32(is, "plx header");
  const std::uint32_t count = get_u32(is, "plx header");
  require(stride == 4 || stride == 5, ErrorCode::parse, "plx point size must be 4 or 5 floats");
  std::vector<float> rec(static_cast<std::size_t>(count) * stride);
  get_f32s(is, rec, "plx");
  std::vector<LidarPoint> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float* r = rec.data() + i * stride;
    out[i].position = {r[0], r[1], r[2]};
    out[i].intensity = r[3];
    if (stride == 5) out[i].ambient = r[4];
  }
  return out;
}

void write_plx(const std::filesystem::path& path, const std::vector<LidarPoint>& points) {
  auto os = open_out(path);
  write_plx(os, points);
  finish(os, path);
}

std::vector<LidarPoint> read_plx(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_plx(is);
}

void write_ppm(const std::filesystem::path& path, const FeatureMapF& rgb) {
  require(rgb.channels() == 3 || rgb.channels() == 1, ErrorCode::shape_mismatch, "ppm needs 1 or 3 channels");
  auto os = open_out(path);
  os << "P6\n" << rgb.width() << ' ' << rgb.height() << "\n255\n";
  std::vector<unsigned char> px(rgb.height() * rgb.width() * 3);
  for (std::size_t y = 0; y < rgb.height(); ++y)
    for (std::size_t x = 0; x < rgb.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = rgb(rgb.channels() == 3 ? c : 0, y, x);
        px[(y * rgb.width() + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f) * 255.0f));
      }
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  finish(os, path);
}

FeatureMapF read_ppm(const std::filesystem::path& path) {
  auto is = open_in(path);
  const auto token = [&]() {
    std::string t;
    char ch = 0;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (!std::isspace(static_cast<unsigned char>(ch))) {
        t.push_back(ch);
        break;
      }
    }
    while (is.get(ch) && !std::isspace(static_cast<unsigned char>(ch))) t.push_back(ch);
    return t;
  };
  require(token() == "P6", ErrorCode::parse, path.string() + " is not a binary PPM (P6)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    fail(ErrorCode::parse, "malformed PPM header in " + path.string());
  }
  require(maxval == 255 && w > 0 && h > 0, ErrorCode::parse, "only 8-bit PPM images are supported");
  std::vector<unsigned char> px(w * h * 3);
  is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  require(is.gcount() == static_cast<std::streamsize>(px.size()), ErrorCode::io, "truncated PPM " + path.string());
  FeatureMapF out(3, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out(c, y, x) = static_cast<float>(px[(y * w + x) * 3 + c]) / 255.0f;
  return out;
}

void write_bundle(const std::filesystem::path& dir, const std::map<std::string, FeatureMapF>& tensors) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  require(manifest.good(), ErrorCode::io, "cannot write manifest in " + dir.string());
  for (const auto& [name, t] : tensors) {
    require(!name.empty() && name.find_first_of(" \t\n/\\") == std::string::npos, ErrorCode::invalid_config,
            "tensor names must be non-empty without whitespace or slashes: '" + name + "'");
    manifest << name << ' ' << t.channels() << ' ' << t.height() << ' ' << t.width() << '\n';
    write_fmap(dir / (name + ".fmap"), t);
  }
  finish(manifest, dir / "manifest.txt");
}

std::map<std::string, FeatureMapF> read_bundle(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  require(manifest.good(), ErrorCode::io, "cannot open manifest in " + dir.string());
  std::map<std::string, FeatureMapF> out;
  std::string line;
  while (std::getline(manifest, line)) {
    std::istringstream ls(line);
    std::string name;
    Shape s;
    if (!(ls >> name)) continue;
    require(static_cast<bool>(ls >> s.channels >> s.height >> s.width), ErrorCode::parse,
            "manifest line must be `name C H W`: " + line);
    auto t = read_fmap(dir / (name + ".fmap"));
    require_same_shape(t.shape(), s, ("bundle tensor '" + name + "'").c_str());
    out.emplace(name, std::move(t));
  }
  return out;
}

}  // namespace panobev::io
