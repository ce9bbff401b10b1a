// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "panobev/error.hpp"

namespace panobev {

struct Shape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t plane() const noexcept { return height * width; }
  std::size_t size() const noexcept { return channels * height * width; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Dense C x H x W tensor, channel-major then row-major.
template <typename T>
class FeatureMap {
 public:
  using value_type = T;

  FeatureMap() = default;
  FeatureMap(std::size_t channels, std::size_t height, std::size_t width, T fill = T{})
      : shape_{channels, height, width}, data_(shape_.size(), fill) {}
  explicit FeatureMap(Shape shape, T fill = T{}) : shape_(shape), data_(shape.size(), fill) {}
  FeatureMap(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    require(data_.size() == shape_.size(), ErrorCode::shape_mismatch,
            "data length " + std::to_string(data_.size()) + " does not match " + to_string(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t channels() const noexcept { return shape_.channels; }
  std::size_t height() const noexcept { return shape_.height; }
  std::size_t width() const noexcept { return shape_.width; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  const T& operator()(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::span<T> channel(std::size_t c) noexcept { return std::span<T>(data_).subspan(c * shape_.plane(), shape_.plane()); }
  std::span<const T> channel(std::size_t c) const noexcept {
    return std::span<const T>(data_).subspan(c * shape_.plane(), shape_.plane());
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  FeatureMap<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return FeatureMap<U>(shape_, std::move(out));
  }

  bool operator==(const FeatureMap&) const = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using FeatureMapF = FeatureMap<float>;
using FeatureMapD = FeatureMap<double>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  require(a == b, ErrorCode::shape_mismatch, std::string(what) + ": " + to_string(a) + " vs " + to_string(b));
}

}  // namespace panobev
