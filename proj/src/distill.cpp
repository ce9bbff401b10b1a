// SPDX-License-Identifier: Apache-2.0
#include "panobev/distill.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace panobev {

namespace {

// Log-softmax of one channel at temperature t, computed in double.
template <typename T>
void log_softmax(std::span<const T> z, double t, std::vector<double>& out) {
  out.resize(z.size());
  double m = -INFINITY;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = static_cast<double>(z[i]) / t;
    m = std::max(m, out[i]);
  }
  double s = 0.0;
  for (const double v : out) s += std::exp(v - m);
  const double lse = m + std::log(s);
  for (auto& v : out) v -= lse;
}

void check_temperature(double t) {
  require(std::isfinite(t) && t > 0.0, ErrorCode::invalid_config, "temperature must be positive");
}

}  // namespace

void DistillConfig::validate() const {
  check_temperature(temperature);
  require(std::isfinite(alpha1) && std::isfinite(alpha2) && alpha1 >= 0.0 && alpha2 >= 0.0,
          ErrorCode::invalid_config, "distillation weights must be non-negative");
}

template <typename T>
FeatureMap<T> channel_softmax(const FeatureMap<T>& f, double temperature) {
  check_temperature(temperature);
  FeatureMap<T> out(f.shape());
  const auto C = static_cast<long long>(f.channels());
#pragma omp parallel for schedule(static)
  for (long long c = 0; c < C; ++c) {
    std::vector<double> lp;
    log_softmax(f.channel(c), temperature, lp);
    auto dst = out.channel(c);
    for (std::size_t i = 0; i < lp.size(); ++i) dst[i] = static_cast<T>(std::exp(lp[i]));
  }
  return out;
}

template <typename T>
double kl_channelwise(const FeatureMap<T>& teacher, const FeatureMap<T>& student, double temperature) {
  check_temperature(temperature);
  require_same_shape(teacher.shape(), student.shape(), "kl_channelwise");
  const std::size_t C = teacher.channels();
  std::vector<double> per_channel(C, 0.0);
  const auto Cl = static_cast<long long>(C);
#pragma omp parallel for schedule(static)
  for (long long c = 0; c < Cl; ++c) {
    std::vector<double> lt;
    std::vector<double> ls;
    log_softmax(teacher.channel(c), temperature, lt);
    log_softmax(student.channel(c), temperature, ls);
    double acc = 0.0;
    for (std::size_t i = 0; i < lt.size(); ++i) acc += std::exp(lt[i]) * (lt[i] - ls[i]);
    per_channel[c] = acc;
  }
  double total = 0.0;
  for (const double v : per_channel) total += v;
  return temperature * temperature / static_cast<double>(C) * total;
}

template <typename T>
FeatureMap<T> kl_backward(const FeatureMap<T>& teacher, const FeatureMap<T>& student, double temperature) {
  check_temperature(temperature);
  require_same_shape(teacher.shape(), student.shape(), "kl_backward");
  const double scale = temperature / static_cast<double>(teacher.channels());
  FeatureMap<T> grad(student.shape());
  const auto C = static_cast<long long>(teacher.channels());
#pragma omp parallel for schedule(static)
  for (long long c = 0; c < C; ++c) {
    std::vector<double> lt;
    std::vector<double> ls;
    log_softmax(teacher.channel(c), temperature, lt);
    log_softmax(student.channel(c), temperature, ls);
    auto dst = grad.channel(c);
    for (std::size_t i = 0; i < lt.size(); ++i) dst[i] = static_cast<T>(scale * (std::exp(ls[i]) - std::exp(lt[i])));
  }
  return grad;
}

template <typename T>
KdResult<T> kd_loss(const FeatureMap<T>& teacher, const FeatureMap<T>& student,
                    const std::optional<FeatureMap<T>>& auxiliary, const DistillConfig& cfg) {
  cfg.validate();
  KdResult<T> r;
  r.teacher_student = kl_channelwise(teacher, student, cfg.temperature);
  r.grad_student = kl_backward(teacher, student, cfg.temperature);
  if (cfg.alpha1 != 1.0)
    for (auto& g : r.grad_student.data()) g = static_cast<T>(cfg.alpha1 * g);
  r.loss = cfg.alpha1 * r.teacher_student;
  if (auxiliary) {
    r.teacher_auxiliary = kl_channelwise(teacher, *auxiliary, cfg.temperature);
    auto ga = kl_backward(teacher, *auxiliary, cfg.temperature);
    if (cfg.alpha2 != 1.0)
      for (auto& g : ga.data()) g = static_cast<T>(cfg.alpha2 * g);
    r.grad_auxiliary = std::move(ga);
    r.loss += cfg.alpha2 * r.teacher_auxiliary;
  }
  return r;
}

template <typename T>
AuxRoutedGradients<T> route_auxiliary_gradient(const SgfmCache<T>& aux_cache, const FeatureMap<T>& grad_auxiliary,
                                               const SgfmParams<T>& aux_params, AuxGradientRoute route) {
  auto g = auxiliary_backward(aux_cache, grad_auxiliary, aux_params);
  if (route == AuxGradientRoute::auxiliary_only) g.student_camera.fill(T{});
  return {std::move(g.student_camera), std::move(g.params)};
}

template <typename T>
AffinityResult<T> affinity_distill(const FeatureMap<T>& teacher, const FeatureMap<T>& student,
                                   const AffinityConfig& cfg) {
  require_same_shape(teacher.shape(), student.shape(), "affinity_distill");
  require(cfg.stride >= 1, ErrorCode::invalid_config, "affinity stride must be >= 1");
  require(!teacher.empty(), ErrorCode::empty_input, "affinity_distill on an empty map");
  const std::size_t C = teacher.channels();
  const std::size_t W = teacher.width();
  const std::size_t plane = teacher.shape().plane();

  std::vector<std::size_t> pos;
  for (std::size_t y = 0; y < teacher.height(); y += cfg.stride)
    for (std::size_t x = 0; x < W; x += cfg.stride) pos.push_back(y * W + x);
  const std::size_t N = pos.size();

  AffinityResult<T> r;
  r.positions = N;
  r.grad_student = FeatureMap<T>(student.shape());

  // Unit feature vectors, position-major; zero vectors stay zero.
  const auto normalize = [&](const FeatureMap<T>& f, std::vector<double>& unit, std::vector<double>& norms,
                             std::size_t& zeros) {
    unit.assign(N * C, 0.0);
    norms.assign(N, 0.0);
    const auto data = f.data();
    for (std::size_t i = 0; i < N; ++i) {
      double n2 = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double v = data[c * plane + pos[i]];
        n2 += v * v;
      }
      const double n = std::sqrt(n2);
      norms[i] = n;
      if (n == 0.0) {
        ++zeros;
        continue;
      }
      for (std::size_t c = 0; c < C; ++c) unit[i * C + c] = data[c * plane + pos[i]] / n;
    }
  };
  std::vector<double> ut, us, nt, ns;
  normalize(teacher, ut, nt, r.zero_norm_teacher);
  normalize(student, us, ns, r.zero_norm_student);

  const double inv_n2 = 1.0 / (static_cast<double>(N) * static_cast<double>(N));
  std::vector<double> row_loss(N, 0.0);
  std::vector<double> d_unit(N * C, 0.0);
  const auto Nl = static_cast<long long>(N);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < Nl; ++i) {
    double acc = 0.0;
    double* du = d_unit.data() + i * C;
    for (std::size_t j = 0; j < N; ++j) {
      double at = 0.0;
      double as = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        at += ut[i * C + c] * ut[j * C + c];
        as += us[i * C + c] * us[j * C + c];
      }
      const double diff = as - at;
      acc += diff * diff;
      // d/d unit_i of sum over (i,j) and (j,i) entries: 2 * 2 * diff / N^2 * unit_j
      const double w = 4.0 * diff * inv_n2;
      for (std::size_t c = 0; c < C; ++c) du[c] += w * us[j * C + c];
    }
    row_loss[i] = acc;
  }
  double total = 0.0;
  for (const double v : row_loss) total += v;
  r.loss = total * inv_n2;

  auto g = r.grad_student.data();
  for (std::size_t i = 0; i < N; ++i) {
    if (ns[i] == 0.0) continue;
    const double* u = us.data() + i * C;
    const double* du = d_unit.data() + i * C;
    double proj = 0.0;
    for (std::size_t c = 0; c < C; ++c) proj += u[c] * du[c];
    for (std::size_t c = 0; c < C; ++c) g[c * plane + pos[i]] = static_cast<T>((du[c] - u[c] * proj) / ns[i]);
  }
  return r;
}

#define PANOBEV_INSTANTIATE(T)                                                                                    \
  template FeatureMap<T> channel_softmax<T>(const FeatureMap<T>&, double);                                        \
  template double kl_channelwise<T>(const FeatureMap<T>&, const FeatureMap<T>&, double);                          \
  template FeatureMap<T> kl_backward<T>(const FeatureMap<T>&, const FeatureMap<T>&, double);                      \
  template KdResult<T> kd_loss<T>(const FeatureMap<T>&, const FeatureMap<T>&, const std::optional<FeatureMap<T>>&, \
                                  const DistillConfig&);                                                          \
  template AuxRoutedGradients<T> route_auxiliary_gradient<T>(const SgfmCache<T>&, const FeatureMap<T>&,           \
                                                             const SgfmParams<T>&, AuxGradientRoute);             \
  template AffinityResult<T> affinity_distill<T>(const FeatureMap<T>&, const FeatureMap<T>&, const AffinityConfig&);

PANOBEV_INSTANTIATE(float)
PANOBEV_INSTANTIATE(double)
#undef PANOBEV_INSTANTIATE

}  // namespace panobev
