// SPDX-License-Identifier: Apache-2.0
#include "panobev/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace panobev {

namespace {

template <typename T>
T sigmoid(T a) noexcept {
  if (a >= T{0}) return T{1} / (T{1} + std::exp(-a));
  const T e = std::exp(a);
  return e / (T{1} + e);
}

// Source column for a horizontal tap, or -1 when it falls in zero padding.
long long tap_column(long long x, long long dx, long long width, RefinePadding padding) noexcept {
  long long xx = x + dx;
  if (xx >= 0 && xx < width) return xx;
  if (padding == RefinePadding::zero) return -1;
  return xx < 0 ? xx + width : xx - width;
}

template <typename T>
const T* refine_input_channel(const FeatureMap<T>& fused, std::size_t i) noexcept {
  return fused.channel(i % fused.channels()).data();
}

template <typename T>
void check_pair(const FeatureMap<T>& image, const FeatureMap<T>& lidar, const SgfmParams<T>& params) {
  params.validate();
  require_same_shape(image.shape(), lidar.shape(), "sgfm inputs");
  require(image.channels() == params.channels, ErrorCode::shape_mismatch,
          "feature channels " + std::to_string(image.channels()) + " do not match params channels " +
              std::to_string(params.channels));
}

}  // namespace

template <typename T>
SgfmParams<T> SgfmParams<T>::zeros(std::size_t channels, std::size_t out_channels, RefineInput mode) {
  SgfmParams<T> p;
  p.channels = channels;
  p.out_channels = out_channels;
  p.refine_input = mode;
  p.gate_weights.assign(channels * 2 * channels, T{});
  p.refine_weights.assign(out_channels * p.refine_in_channels() * 9, T{});
  p.bn_eps = static_cast<T>(1e-5);
  p.bn_mean.assign(out_channels, T{0});
  p.bn_var.assign(out_channels, T{1});
  // scale / sqrt(var + eps) == 1 exactly, so the batch norm is an identity.
  p.bn_scale.assign(out_channels, std::sqrt(T{1} + p.bn_eps));
  p.bn_shift.assign(out_channels, T{0});
  return p;
}

template <typename T>
void SgfmParams<T>::validate() const {
  require(channels >= 1 && out_channels >= 1, ErrorCode::invalid_config, "sgfm needs channels, out_channels >= 1");
  require(gate_weights.size() == channels * 2 * channels, ErrorCode::invalid_config, "gate weights must be C x 2C");
  require(refine_weights.size() == out_channels * refine_in_channels() * 9, ErrorCode::invalid_config,
          "refine weights must be C_out x C_in x 3 x 3");
  require(bn_mean.size() == out_channels && bn_var.size() == out_channels && bn_scale.size() == out_channels &&
              bn_shift.size() == out_channels,
          ErrorCode::invalid_config, "batch-norm vectors must have C_out entries");
  require(bn_eps > T{0}, ErrorCode::invalid_config, "bn_eps must be positive");
  for (std::size_t o = 0; o < out_channels; ++o)
    require(bn_var[o] + bn_eps > T{0}, ErrorCode::invalid_config, "bn_var + eps must be positive");
}

template <typename T>
FeatureMap<T> sgfm_gate(const FeatureMap<T>& image, const FeatureMap<T>& lidar, const SgfmParams<T>& params) {
  check_pair(image, lidar, params);
  const std::size_t C = params.channels;
  const std::size_t plane = image.shape().plane();
  FeatureMap<T> gate(image.shape());
  const T* I = image.data().data();
  const T* L = lidar.data().data();
  const T* W = params.gate_weights.data();
  T* G = gate.data().data();
  const auto n = static_cast<long long>(plane);
#pragma omp parallel for schedule(static)
  for (long long p = 0; p < n; ++p) {
    for (std::size_t k = 0; k < C; ++k) {
      const T* row = W + k * 2 * C;
      T a{};
      for (std::size_t j = 0; j < C; ++j) a += row[j] * I[j * plane + p];
      for (std::size_t j = 0; j < C; ++j) a += row[C + j] * L[j * plane + p];
      G[k * plane + p] = sigmoid(a);
    }
  }
  return gate;
}

template <typename T>
FeatureMap<T> sgfm_fuse(const FeatureMap<T>& image, const FeatureMap<T>& lidar, const FeatureMap<T>& gate) {
  require_same_shape(image.shape(), lidar.shape(), "sgfm_fuse inputs");
  require_same_shape(image.shape(), gate.shape(), "sgfm_fuse gate");
  FeatureMap<T> out(image.shape());
  const T* I = image.data().data();
  const T* L = lidar.data().data();
  const T* G = gate.data().data();
  T* F = out.data().data();
  const auto n = static_cast<long long>(out.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    // Clamp away rounding so the result never leaves [min, max] of the inputs.
    const T lo = std::min(I[i], L[i]);
    const T hi = std::max(I[i], L[i]);
    F[i] = std::clamp(G[i] * I[i] + (T{1} - G[i]) * L[i], lo, hi);
  }
  return out;
}

template <typename T>
FeatureMap<T> refine_conv(const FeatureMap<T>& fused, const SgfmParams<T>& params) {
  params.validate();
  require(fused.channels() == params.channels, ErrorCode::shape_mismatch, "refine input channel count");
  const std::size_t Cin = params.refine_in_channels();
  const std::size_t Cout = params.out_channels;
  const auto H = static_cast<long long>(fused.height());
  const auto Wd = static_cast<long long>(fused.width());
  FeatureMap<T> out(Cout, fused.height(), fused.width());
  const T* K = params.refine_weights.data();

  const auto rows = static_cast<long long>(Cout) * H;
#pragma omp parallel for schedule(static)
  for (long long oy = 0; oy < rows; ++oy) {
    const auto o = static_cast<std::size_t>(oy / H);
    const long long y = oy % H;
    for (long long x = 0; x < Wd; ++x) {
      T acc{};
      for (std::size_t i = 0; i < Cin; ++i) {
        const T* src = refine_input_channel(fused, i);
        const T* k = K + (o * Cin + i) * 9;
        for (long long dy = -1; dy <= 1; ++dy) {
          const long long yy = y + dy;
          if (yy < 0 || yy >= H) continue;
          for (long long dx = -1; dx <= 1; ++dx) {
            const long long xx = tap_column(x, dx, Wd, params.padding);
            if (xx < 0) continue;
            acc += k[(dy + 1) * 3 + (dx + 1)] * src[yy * Wd + xx];
          }
        }
      }
      out(o, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
    }
  }
  return out;
}

namespace {

template <typename T>
FeatureMap<T> bn_relu(const FeatureMap<T>& conv, const SgfmParams<T>& params) {
  FeatureMap<T> out(conv.shape());
  const std::size_t plane = conv.shape().plane();
  for (std::size_t o = 0; o < conv.channels(); ++o) {
    const T inv = params.bn_scale[o] / std::sqrt(params.bn_var[o] + params.bn_eps);
    const T* y = conv.channel(o).data();
    T* z = out.channel(o).data();
    for (std::size_t p = 0; p < plane; ++p) {
      const T v = (y[p] - params.bn_mean[o]) * inv + params.bn_shift[o];
      z[p] = v > T{0} ? v : T{0};
    }
  }
  return out;
}

}  // namespace

template <typename T>
FeatureMap<T> sgfm_refine(const FeatureMap<T>& fused, const SgfmParams<T>& params) {
  return bn_relu(refine_conv(fused, params), params);
}

template <typename T>
FeatureMap<T> sgfm_forward(const FeatureMap<T>& image, const FeatureMap<T>& lidar, const SgfmParams<T>& params,
                           SgfmCache<T>* cache) {
  auto gate = sgfm_gate(image, lidar, params);
  auto fused = sgfm_fuse(image, lidar, gate);
  auto conv = refine_conv(fused, params);
  auto out = bn_relu(conv, params);
  if (cache) {
    cache->image = image;
    cache->lidar = lidar;
    cache->gate = std::move(gate);
    cache->fused = std::move(fused);
    cache->conv = std::move(conv);
    cache->output = out;
  }
  return out;
}

template <typename T>
SgfmInputGradients<T> sgfm_backward(const SgfmCache<T>& cache, const FeatureMap<T>& grad_out,
                                    const SgfmParams<T>& params) {
  params.validate();
  require_same_shape(grad_out.shape(), cache.output.shape(), "sgfm_backward grad_out");
  const std::size_t C = params.channels;
  const std::size_t Cin = params.refine_in_channels();
  const std::size_t Cout = params.out_channels;
  const std::size_t plane = cache.fused.shape().plane();
  const auto H = static_cast<long long>(cache.fused.height());
  const auto Wd = static_cast<long long>(cache.fused.width());

  SgfmInputGradients<T> g;
  g.params.bn_scale.assign(Cout, T{});
  g.params.bn_shift.assign(Cout, T{});
  g.params.refine_weights.assign(params.refine_weights.size(), T{});
  g.params.gate_weights.assign(params.gate_weights.size(), T{});

  // ReLU and batch norm.
  FeatureMap<T> d_conv(cache.conv.shape());
  for (std::size_t o = 0; o < Cout; ++o) {
    const T rstd = T{1} / std::sqrt(params.bn_var[o] + params.bn_eps);
    const T inv = params.bn_scale[o] * rstd;
    const T* y = cache.conv.channel(o).data();
    const T* z = cache.output.channel(o).data();
    const T* dz_out = grad_out.channel(o).data();
    T* dy = d_conv.channel(o).data();
    T d_scale{};
    T d_shift{};
    for (std::size_t p = 0; p < plane; ++p) {
      const T dz = z[p] > T{0} ? dz_out[p] : T{0};
      d_scale += dz * (y[p] - params.bn_mean[o]) * rstd;
      d_shift += dz;
      dy[p] = dz * inv;
    }
    g.params.bn_scale[o] = d_scale;
    g.params.bn_shift[o] = d_shift;
  }

  // Conv weight gradient, one (o, i) kernel per task.
  const auto pairs = static_cast<long long>(Cout * Cin);
#pragma omp parallel for schedule(static)
  for (long long oi = 0; oi < pairs; ++oi) {
    const auto o = static_cast<std::size_t>(oi) / Cin;
    const auto i = static_cast<std::size_t>(oi) % Cin;
    const T* src = refine_input_channel(cache.fused, i);
    const T* dy = d_conv.channel(o).data();
    T* dk = g.params.refine_weights.data() + (o * Cin + i) * 9;
    for (long long ky = -1; ky <= 1; ++ky) {
      for (long long kx = -1; kx <= 1; ++kx) {
        T acc{};
        for (long long y = 0; y < H; ++y) {
          const long long yy = y + ky;
          if (yy < 0 || yy >= H) continue;
          for (long long x = 0; x < Wd; ++x) {
            const long long xx = tap_column(x, kx, Wd, params.padding);
            if (xx < 0) continue;
            acc += dy[y * Wd + x] * src[yy * Wd + xx];
          }
        }
        dk[(ky + 1) * 3 + (kx + 1)] = acc;
      }
    }
  }

  // Conv input gradient folded back onto F_fus (duplicated halves add up).
  FeatureMap<T> d_fused(cache.fused.shape());
  const auto crow = static_cast<long long>(C) * H;
#pragma omp parallel for schedule(static)
  for (long long cy = 0; cy < crow; ++cy) {
    const auto c = static_cast<std::size_t>(cy / H);
    const long long yy = cy % H;
    for (long long xx = 0; xx < Wd; ++xx) {
      T acc{};
      for (std::size_t i = c; i < Cin; i += C) {
        for (std::size_t o = 0; o < Cout; ++o) {
          const T* k = params.refine_weights.data() + (o * Cin + i) * 9;
          const T* dy = d_conv.channel(o).data();
          for (long long ky = -1; ky <= 1; ++ky) {
            const long long y = yy - ky;
            if (y < 0 || y >= H) continue;
            for (long long kx = -1; kx <= 1; ++kx) {
              const long long x = tap_column(xx, -kx, Wd, params.padding);
              if (x < 0) continue;
              acc += k[(ky + 1) * 3 + (kx + 1)] * dy[y * Wd + x];
            }
          }
        }
      }
      d_fused(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) = acc;
    }
  }

  // Convex gate and sigmoid.
  g.image = FeatureMap<T>(cache.image.shape());
  g.lidar = FeatureMap<T>(cache.lidar.shape());
  FeatureMap<T> d_pre(cache.gate.shape());
  {
    const T* I = cache.image.data().data();
    const T* L = cache.lidar.data().data();
    const T* G = cache.gate.data().data();
    const T* dF = d_fused.data().data();
    T* dI = g.image.data().data();
    T* dL = g.lidar.data().data();
    T* dA = d_pre.data().data();
    const auto n = static_cast<long long>(cache.gate.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i) {
      dI[i] = dF[i] * G[i];
      dL[i] = dF[i] * (T{1} - G[i]);
      dA[i] = dF[i] * (I[i] - L[i]) * G[i] * (T{1} - G[i]);
    }
  }

  // 1x1 gate conv: weight gradient and input gradient.
  const T* I = cache.image.data().data();
  const T* L = cache.lidar.data().data();
  const T* dA = d_pre.data().data();
  const auto wcount = static_cast<long long>(C * 2 * C);
#pragma omp parallel for schedule(static)
  for (long long kj = 0; kj < wcount; ++kj) {
    const auto k = static_cast<std::size_t>(kj) / (2 * C);
    const auto j = static_cast<std::size_t>(kj) % (2 * C);
    const T* src = j < C ? I + j * plane : L + (j - C) * plane;
    T acc{};
    for (std::size_t p = 0; p < plane; ++p) acc += dA[k * plane + p] * src[p];
    g.params.gate_weights[static_cast<std::size_t>(kj)] = acc;
  }
  T* dI = g.image.data().data();
  T* dL = g.lidar.data().data();
  const T* W = params.gate_weights.data();
  const auto n = static_cast<long long>(plane);
#pragma omp parallel for schedule(static)
  for (long long p = 0; p < n; ++p) {
    for (std::size_t j = 0; j < C; ++j) {
      T ai{};
      T al{};
      for (std::size_t k = 0; k < C; ++k) {
        ai += W[k * 2 * C + j] * dA[k * plane + p];
        al += W[k * 2 * C + C + j] * dA[k * plane + p];
      }
      dI[j * plane + p] += ai;
      dL[j * plane + p] += al;
    }
  }
  return g;
}

template <typename T>
FeatureMap<T> auxiliary_forward(const FeatureMap<T>& student_camera, const FeatureMap<T>& teacher_lidar,
                                const SgfmParams<T>& params, SgfmCache<T>* cache) {
  return sgfm_forward(student_camera, teacher_lidar, params, cache);
}

template <typename T>
AuxiliaryGradients<T> auxiliary_backward(const SgfmCache<T>& cache, const FeatureMap<T>& grad_out,
                                         const SgfmParams<T>& params) {
  auto g = sgfm_backward(cache, grad_out, params);
  return {std::move(g.image), FeatureMap<T>(cache.lidar.shape()), std::move(g.params)};
}

#define PANOBEV_INSTANTIATE(T)                                                                                       \
  template struct SgfmParams<T>;                                                                                     \
  template FeatureMap<T> sgfm_gate<T>(const FeatureMap<T>&, const FeatureMap<T>&, const SgfmParams<T>&);             \
  template FeatureMap<T> sgfm_fuse<T>(const FeatureMap<T>&, const FeatureMap<T>&, const FeatureMap<T>&);             \
  template FeatureMap<T> refine_conv<T>(const FeatureMap<T>&, const SgfmParams<T>&);                                 \
  template FeatureMap<T> sgfm_refine<T>(const FeatureMap<T>&, const SgfmParams<T>&);                                 \
  template FeatureMap<T> sgfm_forward<T>(const FeatureMap<T>&, const FeatureMap<T>&, const SgfmParams<T>&,           \
                                         SgfmCache<T>*);                                                             \
  template SgfmInputGradients<T> sgfm_backward<T>(const SgfmCache<T>&, const FeatureMap<T>&, const SgfmParams<T>&);  \
  template FeatureMap<T> auxiliary_forward<T>(const FeatureMap<T>&, const FeatureMap<T>&, const SgfmParams<T>&,      \
                                              SgfmCache<T>*);                                                        \
  template AuxiliaryGradients<T> auxiliary_backward<T>(const SgfmCache<T>&, const FeatureMap<T>&,                    \
                                                       const SgfmParams<T>&);

PANOBEV_INSTANTIATE(float)
PANOBEV_INSTANTIATE(double)
#undef PANOBEV_INSTANTIATE

}  // namespace panobev
