// SPDX-License-Identifier: Apache-2.0
//
// Student multi-task objective: focal loss (segmentation), balanced MSE
// (centerness), masked L1 (offset), combined with homoscedastic-uncertainty
// weights exp(-s_i) * L_i + s_i, plus the total objective L_kd + L_stu.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "panobev/tensor.hpp"

namespace panobev {

template <typename T>
struct LossWithGrad {
  double value = 0.0;
  FeatureMap<T> grad;
};

struct FocalConfig {
  double alpha = 0.25;
  double gamma = 2.0;
};

/// Mean over pixels of -alpha_t (1 - p_t)^gamma log p_t, p = sigmoid(logit).
/// `logits` is 1 x H x W; target is an H*W 0/1 mask.
template <typename T>
LossWithGrad<T> focal_loss(const FeatureMap<T>& logits, std::span<const std::uint8_t> target,
                           const FocalConfig& cfg = {});

/// Batch balanced MSE over the valid cells V:
///   mean_{i in V} -log softmax_j(-(pred_i - target_j)^2 / (2 sigma^2))[j = i]
/// Throws EmptySupervision when V is empty.
template <typename T>
LossWithGrad<T> balanced_mse(const FeatureMap<T>& pred, const FeatureMap<T>& target,
                             std::span<const std::uint8_t> valid, double noise_sigma = 1.0);

/// Mean |pred - target| over valid cells and both offset channels.
template <typename T>
LossWithGrad<T> masked_l1(const FeatureMap<T>& pred, const FeatureMap<T>& target,
                          std::span<const std::uint8_t> valid);

struct LossWeights {
  std::array<double, 3> log_variance{0.0, 0.0, 0.0};  // s_seg, s_cen, s_off
};

struct WeightedSum {
  double value = 0.0;
  std::vector<double> d_losses;         // exp(-s_i)
  std::vector<double> d_log_variances;  // 1 - exp(-s_i) L_i
};

WeightedSum uncertainty_weighted_sum(std::span<const double> losses, std::span<const double> log_variances);
WeightedSum uncertainty_weighted_sum(const std::array<double, 3>& losses, const LossWeights& w);

/// A scalar loss with gradients keyed by the tensor they address.
template <typename T>
struct LossTerm {
  double value = 0.0;
  std::map<std::string, FeatureMap<T>> grads;
};

/// Sum of two loss terms; gradients for the same tensor are added.
template <typename T>
LossTerm<T> total_loss(const LossTerm<T>& kd, const LossTerm<T>& student);

}  // namespace panobev
