// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "panobev/tensor.hpp"

namespace panobev {

/// Horizontal boundary handling. Vertical coordinates always clamp.
enum class HorizontalBoundary {
  wrap,   // cyclic, for equirectangular panoramas
  clamp,  // for ordinary rasters (fisheye images)
};

struct BilinearTap {
  std::size_t y = 0;
  std::size_t x = 0;
  double weight = 0.0;
};

/// The four taps in fixed order (y0,x0), (y0,x1), (y1,x0), (y1,x1). Taps may
/// alias the same pixel at a clamped border; weights are >= 0 and sum to 1.
using BilinearTaps = std::array<BilinearTap, 4>;

BilinearTaps bilinear_taps(std::size_t height, std::size_t width, double u, double v,
                           HorizontalBoundary mode = HorizontalBoundary::wrap) noexcept;

/// Per-channel bilinear blend written into `out` (length C): a lerp along x on
/// both rows, then along y. A constant neighbourhood comes back exactly.
template <typename T>
void bilinear_sample(const FeatureMap<T>& f, double u, double v, std::span<T> out,
                     HorizontalBoundary mode = HorizontalBoundary::wrap);

template <typename T>
std::vector<T> bilinear_sample(const FeatureMap<T>& f, double u, double v,
                               HorizontalBoundary mode = HorizontalBoundary::wrap);

template <typename T>
struct PixelGradient {
  std::size_t channel = 0;
  std::size_t y = 0;
  std::size_t x = 0;
  T value{};
};

/// Adjoint of bilinear_sample as a sparse list: 4 entries per channel.
template <typename T>
std::vector<PixelGradient<T>> bilinear_sample_backward(const Shape& shape, double u, double v,
                                                       std::span<const T> grad_out,
                                                       HorizontalBoundary mode = HorizontalBoundary::wrap);

/// Dense form of the adjoint: grad += scatter(grad_out).
template <typename T>
void bilinear_scatter_add(FeatureMap<T>& grad, double u, double v, std::span<const T> grad_out,
                          HorizontalBoundary mode = HorizontalBoundary::wrap);

}  // namespace panobev
