// SPDX-License-Identifier: Apache-2.0
#include "panobev/task_losses.hpp"

#include <algorithm>
#include <cmath>

namespace panobev {

namespace {

double softplus(double a) noexcept { return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))); }

double sigmoid(double a) noexcept {
  if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

std::vector<std::size_t> valid_cells(std::span<const std::uint8_t> valid) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < valid.size(); ++i)
    if (valid[i]) out.push_back(i);
  require(!out.empty(), ErrorCode::empty_supervision, "no valid cells to supervise");
  return out;
}

}  // namespace

template <typename T>
LossWithGrad<T> focal_loss(const FeatureMap<T>& logits, std::span<const std::uint8_t> target,
                           const FocalConfig& cfg) {
  require(logits.size() == target.size(), ErrorCode::shape_mismatch, "focal_loss target size");
  require(!logits.empty(), ErrorCode::empty_input, "focal_loss on an empty map");
  require(cfg.gamma >= 0.0 && cfg.alpha > 0.0 && cfg.alpha < 1.0, ErrorCode::invalid_config,
          "focal loss needs gamma >= 0 and alpha in (0, 1)");
  const auto x = logits.data();
  const std::size_t n = x.size();
  LossWithGrad<T> r{0.0, FeatureMap<T>(logits.shape())};
  auto g = r.grad.data();
  std::vector<double> per(n);
  const auto nl = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < nl; ++i) {
    const bool pos = target[i] != 0;
    const double t = pos ? static_cast<double>(x[i]) : -static_cast<double>(x[i]);
    const double alpha_t = pos ? cfg.alpha : 1.0 - cfg.alpha;
    const double log_p = -softplus(-t);
    const double p = sigmoid(t);
    const double q = sigmoid(-t);  // 1 - p
    const double mod = std::pow(q, cfg.gamma);
    per[i] = -alpha_t * mod * log_p;
    const double d_t = alpha_t * mod * (cfg.gamma * p * log_p - q);
    g[i] = static_cast<T>((pos ? d_t : -d_t) / static_cast<double>(n));
  }
  double acc = 0.0;
  for (const double v : per) acc += v;
  r.value = acc / static_cast<double>(n);
  return r;
}

template <typename T>
LossWithGrad<T> balanced_mse(const FeatureMap<T>& pred, const FeatureMap<T>& target,
                             std::span<const std::uint8_t> valid, double noise_sigma) {
  require_same_shape(pred.shape(), target.shape(), "balanced_mse");
  require(pred.size() == valid.size(), ErrorCode::shape_mismatch, "balanced_mse valid mask size");
  require(std::isfinite(noise_sigma) && noise_sigma > 0.0, ErrorCode::invalid_config, "noise_sigma must be positive");
  const auto cells = valid_cells(valid);
  const std::size_t n = cells.size();
  const double inv_2var = 1.0 / (2.0 * noise_sigma * noise_sigma);
  const double inv_var = 1.0 / (noise_sigma * noise_sigma);
  const auto p = pred.data();
  const auto t = target.data();

  LossWithGrad<T> r{0.0, FeatureMap<T>(pred.shape())};
  auto g = r.grad.data();
  std::vector<double> per(n);
  const auto nl = static_cast<long long>(n);
#pragma omp parallel
  {
    std::vector<double> logits(n);
#pragma omp for schedule(static)
    for (long long a = 0; a < nl; ++a) {
      const double pi = p[cells[a]];
      double m = -INFINITY;
      for (std::size_t b = 0; b < n; ++b) {
        const double d = pi - static_cast<double>(t[cells[b]]);
        logits[b] = -d * d * inv_2var;
        m = std::max(m, logits[b]);
      }
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) s += std::exp(logits[b] - m);
      const double lse = m + std::log(s);
      per[a] = lse - logits[a];
      double dp = (pi - static_cast<double>(t[cells[a]])) * inv_var;
      for (std::size_t b = 0; b < n; ++b)
        dp -= std::exp(logits[b] - lse) * (pi - static_cast<double>(t[cells[b]])) * inv_var;
      g[cells[a]] = static_cast<T>(dp / static_cast<double>(n));
    }
  }
  double acc = 0.0;
  for (const double v : per) acc += v;
  r.value = acc / static_cast<double>(n);
  return r;
}

template <typename T>
LossWithGrad<T> masked_l1(const FeatureMap<T>& pred, const FeatureMap<T>& target,
                          std::span<const std::uint8_t> valid) {
  require_same_shape(pred.shape(), target.shape(), "masked_l1");
  require(pred.shape().plane() == valid.size(), ErrorCode::shape_mismatch, "masked_l1 valid mask size");
  const auto cells = valid_cells(valid);
  const std::size_t plane = pred.shape().plane();
  const double denom = static_cast<double>(cells.size() * pred.channels());
  LossWithGrad<T> r{0.0, FeatureMap<T>(pred.shape())};
  const auto p = pred.data();
  const auto t = target.data();
  auto g = r.grad.data();
  double acc = 0.0;
  for (std::size_t c = 0; c < pred.channels(); ++c) {
    for (const std::size_t i : cells) {
      const double d = static_cast<double>(p[c * plane + i]) - static_cast<double>(t[c * plane + i]);
      acc += std::abs(d);
      g[c * plane + i] = static_cast<T>((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / denom);
    }
  }
  r.value = acc / denom;
  return r;
}

WeightedSum uncertainty_weighted_sum(std::span<const double> losses, std::span<const double> log_variances) {
  require(losses.size() == log_variances.size(), ErrorCode::shape_mismatch, "one log-variance per task loss");
  WeightedSum r;
  r.d_losses.resize(losses.size());
  r.d_log_variances.resize(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const double w = std::exp(-log_variances[i]);
    r.value += w * losses[i] + log_variances[i];
    r.d_losses[i] = w;
    r.d_log_variances[i] = 1.0 - w * losses[i];
  }
  return r;
}

WeightedSum uncertainty_weighted_sum(const std::array<double, 3>& losses, const LossWeights& w) {
  return uncertainty_weighted_sum(std::span<const double>(losses), std::span<const double>(w.log_variance));
}

template <typename T>
LossTerm<T> total_loss(const LossTerm<T>& kd, const LossTerm<T>& student) {
  LossTerm<T> out{kd.value + student.value, kd.grads};
  for (const auto& [name, grad] : student.grads) {
    auto it = out.grads.find(name);
    if (it == out.grads.end()) {
      out.grads.emplace(name, grad);
      continue;
    }
    require_same_shape(it->second.shape(), grad.shape(), ("total_loss gradient '" + name + "'").c_str());
    auto dst = it->second.data();
    const auto src = grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  return out;
}

#define PANOBEV_INSTANTIATE(T)                                                                                   \
  template LossWithGrad<T> focal_loss<T>(const FeatureMap<T>&, std::span<const std::uint8_t>, const FocalConfig&); \
  template LossWithGrad<T> balanced_mse<T>(const FeatureMap<T>&, const FeatureMap<T>&,                           \
                                           std::span<const std::uint8_t>, double);                               \
  template LossWithGrad<T> masked_l1<T>(const FeatureMap<T>&, const FeatureMap<T>&, std::span<const std::uint8_t>); \
  template LossTerm<T> total_loss<T>(const LossTerm<T>&, const LossTerm<T>&);

PANOBEV_INSTANTIATE(float)
PANOBEV_INSTANTIATE(double)
#undef PANOBEV_INSTANTIATE

}  // namespace panobev
