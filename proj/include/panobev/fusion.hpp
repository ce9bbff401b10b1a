// SPDX-License-Identifier: Apache-2.0
//
// Soft-gated fusion of image and LiDAR BEV features:
//
//   G     = sigmoid(W [F_img; F_lidar])            per pixel, W is C x 2C
//   F_fus = G * F_img + (1 - G) * F_lidar
//   F_out = relu(bn(conv3x3(refine_input(F_fus))))
//
// The 3x3 convolution zero-pads rows and wraps columns by default
// (RefinePadding). Batch norm runs in inference mode with caller-supplied
// statistics.
#pragma once

#include <cstddef>
#include <vector>

#include "panobev/tensor.hpp"

namespace panobev {

enum class RefineInput {
  duplicated,  // conv over [F_fus; F_fus] (2C input channels)
  single,      // conv over F_fus (C input channels)
};

enum class RefinePadding {
  cyclic_columns,  // zero rows, wrapped columns
  zero,
};

template <typename T>
struct SgfmParams {
  std::size_t channels = 0;      // C
  std::size_t out_channels = 0;  // C_out of the refine conv
  RefineInput refine_input = RefineInput::duplicated;
  RefinePadding padding = RefinePadding::cyclic_columns;

  std::vector<T> gate_weights;    // C x 2C, row-major
  std::vector<T> refine_weights;  // C_out x C_in x 3 x 3
  std::vector<T> bn_mean;         // C_out
  std::vector<T> bn_var;          // C_out
  std::vector<T> bn_scale;        // C_out
  std::vector<T> bn_shift;        // C_out
  T bn_eps = static_cast<T>(1e-5);

  std::size_t refine_in_channels() const noexcept {
    return refine_input == RefineInput::duplicated ? 2 * channels : channels;
  }

  /// Zero weights, identity batch norm.
  static SgfmParams zeros(std::size_t channels, std::size_t out_channels,
                          RefineInput mode = RefineInput::duplicated);

  /// Throws InvalidConfig on inconsistent sizes or bn_eps <= 0.
  void validate() const;
};

template <typename T>
struct SgfmGradients {
  std::vector<T> gate_weights;
  std::vector<T> refine_weights;
  std::vector<T> bn_scale;
  std::vector<T> bn_shift;
};

template <typename T>
struct SgfmCache {
  FeatureMap<T> image;
  FeatureMap<T> lidar;
  FeatureMap<T> gate;
  FeatureMap<T> fused;
  FeatureMap<T> conv;    // pre-BN
  FeatureMap<T> output;  // post-ReLU
};

template <typename T>
struct SgfmInputGradients {
  FeatureMap<T> image;
  FeatureMap<T> lidar;
  SgfmGradients<T> params;
};

template <typename T>
FeatureMap<T> sgfm_gate(const FeatureMap<T>& image, const FeatureMap<T>& lidar, const SgfmParams<T>& params);

template <typename T>
FeatureMap<T> sgfm_fuse(const FeatureMap<T>& image, const FeatureMap<T>& lidar, const FeatureMap<T>& gate);

/// 3x3 conv -> inference batch norm -> ReLU.
template <typename T>
FeatureMap<T> sgfm_refine(const FeatureMap<T>& fused, const SgfmParams<T>& params);

/// Pre-activation of the refine step (conv only), exposed for tests.
template <typename T>
FeatureMap<T> refine_conv(const FeatureMap<T>& fused, const SgfmParams<T>& params);

template <typename T>
FeatureMap<T> sgfm_forward(const FeatureMap<T>& image, const FeatureMap<T>& lidar, const SgfmParams<T>& params,
                           SgfmCache<T>* cache = nullptr);

template <typename T>
SgfmInputGradients<T> sgfm_backward(const SgfmCache<T>& cache, const FeatureMap<T>& grad_out,
                                    const SgfmParams<T>& params);

/// Auxiliary branch: student camera features gated against frozen teacher
/// LiDAR features with the same module.
template <typename T>
FeatureMap<T> auxiliary_forward(const FeatureMap<T>& student_camera, const FeatureMap<T>& teacher_lidar,
                                const SgfmParams<T>& params, SgfmCache<T>* cache = nullptr);

template <typename T>
struct AuxiliaryGradients {
  FeatureMap<T> student_camera;
  FeatureMap<T> teacher_lidar;  // always zero: the teacher is frozen
  SgfmGradients<T> params;
};

template <typename T>
AuxiliaryGradients<T> auxiliary_backward(const SgfmCache<T>& cache, const FeatureMap<T>& grad_out,
                                         const SgfmParams<T>& params);

}  // namespace panobev
