// SPDX-License-Identifier: Apache-2.0
//
// Channel-wise dense feature distillation and the affinity alternative.
//
// Each channel of a C x H x W map is turned into a spatial distribution by a
// temperature softmax over its H*W positions. The teacher->student loss is
//
//   (T^2 / C) * sum_c KL(softmax(F_t[c] / T) || softmax(F_s[c] / T))
//
// and the full objective weights the teacher->student and teacher->auxiliary
// terms with alpha1 and alpha2. The teacher is always treated as a constant.
#pragma once

#include <cstddef>
#include <optional>

#include "panobev/fusion.hpp"
#include "panobev/tensor.hpp"

namespace panobev {

enum class DistillStage { stage1, stage2, stage3 };

struct DistillConfig {
  double temperature = 4.0;
  double alpha1 = 1.0;
  double alpha2 = 1.0;
  DistillStage attach_stage = DistillStage::stage3;

  /// Throws InvalidConfig for temperature <= 0 or negative alphas.
  void validate() const;
};

template <typename T>
FeatureMap<T> channel_softmax(const FeatureMap<T>& f, double temperature);

template <typename T>
double kl_channelwise(const FeatureMap<T>& teacher, const FeatureMap<T>& student, double temperature);

/// d kl_channelwise / d student = (T / C) * (softmax(student) - softmax(teacher)).
template <typename T>
FeatureMap<T> kl_backward(const FeatureMap<T>& teacher, const FeatureMap<T>& student, double temperature);

template <typename T>
struct KdResult {
  double loss = 0.0;
  double teacher_student = 0.0;
  double teacher_auxiliary = 0.0;  // 0 when no auxiliary features were given
  FeatureMap<T> grad_student;
  std::optional<FeatureMap<T>> grad_auxiliary;
};

template <typename T>
KdResult<T> kd_loss(const FeatureMap<T>& teacher, const FeatureMap<T>& student,
                    const std::optional<FeatureMap<T>>& auxiliary, const DistillConfig& cfg);

/// Where the teacher->auxiliary gradient goes after it reaches the auxiliary
/// fusion output.
enum class AuxGradientRoute {
  into_student,    // also flows into the student camera operand
  auxiliary_only,  // trains only the auxiliary fusion parameters
};

template <typename T>
struct AuxRoutedGradients {
  FeatureMap<T> student_camera;  // zero for AuxGradientRoute::auxiliary_only
  SgfmGradients<T> params;
};

/// Pushes grad_auxiliary from kd_loss back through auxiliary_forward.
template <typename T>
AuxRoutedGradients<T> route_auxiliary_gradient(const SgfmCache<T>& aux_cache, const FeatureMap<T>& grad_auxiliary,
                                               const SgfmParams<T>& aux_params, AuxGradientRoute route);

struct AffinityConfig {
  std::size_t stride = 4;  // spatial subsampling on both axes
};

template <typename T>
struct AffinityResult {
  double loss = 0.0;
  FeatureMap<T> grad_student;
  std::size_t positions = 0;
  std::size_t zero_norm_teacher = 0;
  std::size_t zero_norm_student = 0;
};

/// Mean squared difference of the cosine-affinity matrices of teacher and
/// student feature vectors sampled every `stride` rows and columns.
template <typename T>
AffinityResult<T> affinity_distill(const FeatureMap<T>& teacher, const FeatureMap<T>& student,
                                   const AffinityConfig& cfg = {});

}  // namespace panobev
