// SPDX-License-Identifier: Apache-2.0
#include "panobev/sampling.hpp"

#include <algorithm>
#include <cmath>

namespace panobev {

namespace {

std::size_t wrap_index(double floor_u, std::size_t width) noexcept {
  const auto w = static_cast<long long>(width);
  long long i = static_cast<long long>(floor_u) % w;
  if (i < 0) i += w;
  return static_cast<std::size_t>(i);
}

}  // namespace

namespace {

struct Cell {
  std::size_t y0, y1, x0, x1;
  double fx, fy;
};

Cell locate(std::size_t height, std::size_t width, double u, double v, HorizontalBoundary mode) noexcept {
  Cell c{};
  v = std::clamp(v, 0.0, static_cast<double>(height - 1));
  const double fv = std::floor(v);
  c.fy = v - fv;
  c.y0 = static_cast<std::size_t>(fv);
  c.y1 = std::min(c.y0 + 1, height - 1);
  if (mode == HorizontalBoundary::wrap) {
    const double fu = std::floor(u);
    c.fx = u - fu;
    c.x0 = wrap_index(fu, width);
    c.x1 = c.x0 + 1 == width ? 0 : c.x0 + 1;
  } else {
    u = std::clamp(u, 0.0, static_cast<double>(width - 1));
    const double fu = std::floor(u);
    c.fx = u - fu;
    c.x0 = static_cast<std::size_t>(fu);
    c.x1 = std::min(c.x0 + 1, width - 1);
  }
  return c;
}

}  // namespace

BilinearTaps bilinear_taps(std::size_t height, std::size_t width, double u, double v,
                           HorizontalBoundary mode) noexcept {
  const Cell c = locate(height, width, u, v, mode);
  const double gx = 1.0 - c.fx;
  const double gy = 1.0 - c.fy;
  const double w0 = gx * gy;
  const double w1 = c.fx * gy;
  const double w2 = gx * c.fy;
  // Last weight closes the sum to exactly 1.
  const double w3 = std::max(0.0, 1.0 - (w0 + w1 + w2));
  return {{{c.y0, c.x0, w0}, {c.y0, c.x1, w1}, {c.y1, c.x0, w2}, {c.y1, c.x1, w3}}};
}

template <typename T>
void bilinear_sample(const FeatureMap<T>& f, double u, double v, std::span<T> out, HorizontalBoundary mode) {
  const Cell cell = locate(f.height(), f.width(), u, v, mode);
  const std::size_t plane = f.shape().plane();
  const std::size_t w = f.width();
  const std::size_t i0 = cell.y0 * w + cell.x0;
  const std::size_t i1 = cell.y0 * w + cell.x1;
  const std::size_t i2 = cell.y1 * w + cell.x0;
  const std::size_t i3 = cell.y1 * w + cell.x1;
  const T fx = static_cast<T>(cell.fx);
  const T fy = static_cast<T>(cell.fy);
  const T* base = f.data().data();
  // Nested lerps reproduce a constant neighbourhood exactly.
  for (std::size_t c = 0; c < f.channels(); ++c) {
    const T* p = base + c * plane;
    const T top = p[i0] + fx * (p[i1] - p[i0]);
    const T bottom = p[i2] + fx * (p[i3] - p[i2]);
    out[c] = top + fy * (bottom - top);
  }
}

template <typename T>
std::vector<T> bilinear_sample(const FeatureMap<T>& f, double u, double v, HorizontalBoundary mode) {
  std::vector<T> out(f.channels());
  bilinear_sample<T>(f, u, v, out, mode);
  return out;
}

template <typename T>
std::vector<PixelGradient<T>> bilinear_sample_backward(const Shape& shape, double u, double v,
                                                       std::span<const T> grad_out, HorizontalBoundary mode) {
  require(grad_out.size() == shape.channels, ErrorCode::shape_mismatch, "grad_out length must equal channels");
  const auto taps = bilinear_taps(shape.height, shape.width, u, v, mode);
  std::vector<PixelGradient<T>> out;
  out.reserve(4 * shape.channels);
  for (std::size_t c = 0; c < shape.channels; ++c) {
    for (const auto& t : taps) out.push_back({c, t.y, t.x, static_cast<T>(t.weight) * grad_out[c]});
  }
  return out;
}

template <typename T>
void bilinear_scatter_add(FeatureMap<T>& grad, double u, double v, std::span<const T> grad_out,
                          HorizontalBoundary mode) {
  const auto taps = bilinear_taps(grad.height(), grad.width(), u, v, mode);
  for (std::size_t c = 0; c < grad.channels(); ++c) {
    const T g = grad_out[c];
    for (const auto& t : taps) grad(c, t.y, t.x) += static_cast<T>(t.weight) * g;
  }
}

#define PANOBEV_INSTANTIATE(T)                                                                              \
  template void bilinear_sample<T>(const FeatureMap<T>&, double, double, std::span<T>, HorizontalBoundary); \
  template std::vector<T> bilinear_sample<T>(const FeatureMap<T>&, double, double, HorizontalBoundary);     \
  template std::vector<PixelGradient<T>> bilinear_sample_backward<T>(const Shape&, double, double,          \
                                                                     std::span<const T>, HorizontalBoundary); \
  template void bilinear_scatter_add<T>(FeatureMap<T>&, double, double, std::span<const T>, HorizontalBoundary);

PANOBEV_INSTANTIATE(float)
PANOBEV_INSTANTIATE(double)
#undef PANOBEV_INSTANTIATE

}  // namespace panobev
