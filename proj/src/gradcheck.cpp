// SPDX-License-Identifier: Apache-2.0
#include "panobev/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <random>

#include "panobev/distill.hpp"
#include "panobev/error.hpp"
#include "panobev/fusion.hpp"
#include "panobev/sampling.hpp"
#include "panobev/task_losses.hpp"
#include "panobev/view_transformer.hpp"

namespace panobev {

namespace {

using Vec = std::vector<double>;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  double normal(double sd) { return std::normal_distribution<double>(0.0, sd)(gen_); }
  std::size_t index(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(gen_); }
  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }

  Vec vector(std::size_t n, double lo, double hi) {
    Vec v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }
  FeatureMapD map(Shape s, double lo, double hi) { return FeatureMapD(s, vector(s.size(), lo, hi)); }

 private:
  std::mt19937_64 gen_;
};

double contract(std::span<const double> w, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * y[i];
  return s;
}

Vec concat(std::initializer_list<std::span<const double>> parts) {
  Vec out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

// Copies consecutive slices of x into the given spans.
void unpack(std::span<const double> x, std::initializer_list<std::span<double>> parts) {
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(at), p.size(), p.begin());
    at += p.size();
  }
}

struct Trial {
  Vec analytic;
  Vec numeric;
};

// One instance; std::nullopt asks for a redraw.
using TrialFn = std::function<std::optional<Trial>(Rng&, double step)>;

std::optional<Trial> trial_bilinear(Rng& rng, double step) {
  const Shape s{rng.index(1, 4), rng.index(2, 16), rng.index(2, 16)};
  const auto mode = rng.coin() ? HorizontalBoundary::wrap : HorizontalBoundary::clamp;
  const double u = rng.uniform(0.0, static_cast<double>(mode == HorizontalBoundary::wrap ? s.width : s.width - 1));
  const double v = rng.uniform(0.0, static_cast<double>(s.height - 1));
  const Vec w = rng.vector(s.channels, -1.0, 1.0);
  const auto f = rng.map(s, -1.0, 1.0);

  FeatureMapD grad(s);
  bilinear_scatter_add<double>(grad, u, v, w, mode);
  const auto loss = [&](std::span<const double> x) {
    const FeatureMapD m(s, Vec(x.begin(), x.end()));
    return contract(w, bilinear_sample<double>(m, u, v, mode));
  };
  return Trial{Vec(grad.data().begin(), grad.data().end()), numeric_gradient(loss, Vec(f.data().begin(), f.data().end()), step)};
}

struct PullSetup {
  AngularGridSpec grid;
  SparseVoxelSet voxels;
  PullOptions options;
  Shape image_shape;
};

PullSetup random_pull_setup(Rng& rng) {
  PullSetup p;
  p.image_shape = {rng.index(1, 4), rng.index(4, 16), rng.index(4, 16)};
  p.grid = {p.image_shape.height, p.image_shape.width, -0.5, 0.4};
  const auto spec = VoxelGridSpec::from_full_extent(8.0, 4.0, 8.0, 1.0);
  std::vector<Vec3> pts(60);
  for (auto& q : pts) q = {rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0), rng.uniform(-2.0, 2.0)};
  p.voxels = voxelize(pts, spec);
  if (rng.coin()) p.options.sensor_to_camera = RigidTransform::yaw(rng.uniform(-1.0, 1.0), {0.1, -0.2, 0.05});
  return p;
}

std::optional<Trial> trial_voxel_pull(Rng& rng, double step) {
  const auto p = random_pull_setup(rng);
  const auto image = rng.map(p.image_shape, -1.0, 1.0);
  const Vec w = rng.vector(p.voxels.size() * p.image_shape.channels, -1.0, 1.0);
  const auto grad = voxel_pull_backward<double>(w, p.voxels, p.grid, p.image_shape, p.options);
  const auto loss = [&](std::span<const double> x) {
    const FeatureMapD m(p.image_shape, Vec(x.begin(), x.end()));
    return contract(w, voxel_pull(m, p.voxels, p.grid, p.options).values);
  };
  return Trial{Vec(grad.data().begin(), grad.data().end()),
               numeric_gradient(loss, Vec(image.data().begin(), image.data().end()), step)};
}

std::optional<Trial> trial_vertical_compress(Rng& rng, double step) {
  const auto p = random_pull_setup(rng);
  const auto mode = rng.coin() ? CompressMode::mean : CompressMode::sum;
  auto vf = voxel_pull(rng.map(p.image_shape, -1.0, 1.0), p.voxels, p.grid, p.options);
  vf.values = rng.vector(vf.values.size(), -1.0, 1.0);
  const auto dims = p.voxels.spec.dims();
  const auto w = rng.map({vf.channels, dims.z, dims.x}, -1.0, 1.0);
  const auto grad = vertical_compress_backward(w, vf, mode);
  const auto loss = [&](std::span<const double> x) {
    auto copy = vf;
    copy.values.assign(x.begin(), x.end());
    return contract(w.data(), vertical_compress(copy, mode).features.data());
  };
  return Trial{grad, numeric_gradient(loss, vf.values, step)};
}

SgfmParams<double> random_sgfm(Rng& rng, std::size_t c, std::size_t cout) {
  auto p = SgfmParams<double>::zeros(c, cout, rng.coin() ? RefineInput::duplicated : RefineInput::single);
  p.padding = rng.coin() ? RefinePadding::cyclic_columns : RefinePadding::zero;
  for (auto& v : p.gate_weights) v = rng.normal(0.7);
  for (auto& v : p.refine_weights) v = rng.uniform(-0.5, 0.5);
  for (std::size_t o = 0; o < cout; ++o) {
    p.bn_mean[o] = rng.uniform(-0.2, 0.2);
    p.bn_var[o] = rng.uniform(0.5, 2.0);
    p.bn_scale[o] = rng.uniform(0.5, 1.5);
    p.bn_shift[o] = rng.uniform(-0.2, 0.2);
  }
  return p;
}

std::optional<Trial> trial_sgfm(Rng& rng, double step) {
  const Shape s{rng.index(1, 4), rng.index(3, 8), rng.index(3, 8)};
  const auto params = random_sgfm(rng, s.channels, rng.index(1, 3));
  const auto image = rng.map(s, -1.0, 1.0);
  const auto lidar = rng.map(s, -1.0, 1.0);
  SgfmCache<double> cache;
  const auto out = sgfm_forward(image, lidar, params, &cache);

  // Redraw when a ReLU input sits within reach of the finite-difference step.
  const std::size_t plane = s.plane();
  for (std::size_t o = 0; o < params.out_channels; ++o) {
    const double inv = params.bn_scale[o] / std::sqrt(params.bn_var[o] + params.bn_eps);
    for (std::size_t i = 0; i < plane; ++i) {
      const double pre = (cache.conv.data()[o * plane + i] - params.bn_mean[o]) * inv + params.bn_shift[o];
      if (std::abs(pre) < 1e-3) return std::nullopt;
    }
  }

  const auto w = rng.map(out.shape(), -1.0, 1.0);
  const auto g = sgfm_backward(cache, w, params);
  const Vec analytic = concat({g.image.data(), g.lidar.data(), g.params.gate_weights, g.params.refine_weights,
                               g.params.bn_scale, g.params.bn_shift});
  const Vec x0 = concat({image.data(), lidar.data(), params.gate_weights, params.refine_weights, params.bn_scale,
                         params.bn_shift});
  const auto loss = [&](std::span<const double> x) {
    FeatureMapD im(s), li(s);
    auto p = params;
    unpack(x, {im.data(), li.data(), p.gate_weights, p.refine_weights, p.bn_scale, p.bn_shift});
    return contract(w.data(), sgfm_forward(im, li, p).data());
  };
  return Trial{analytic, numeric_gradient(loss, x0, step)};
}

std::optional<Trial> trial_kl(Rng& rng, double step) {
  const Shape s{rng.index(1, 4), rng.index(2, 16), rng.index(2, 16)};
  DistillConfig cfg;
  cfg.temperature = rng.uniform(1.0, 5.0);
  cfg.alpha1 = rng.uniform(0.5, 2.0);
  cfg.alpha2 = rng.uniform(0.5, 2.0);
  const auto teacher = rng.map(s, -3.0, 3.0);
  const auto student = rng.map(s, -3.0, 3.0);
  const auto aux = rng.map(s, -3.0, 3.0);

  // Plain KL w.r.t. the student, then the weighted objective w.r.t. both operands.
  const auto g_kl = kl_backward(teacher, student, cfg.temperature);
  const auto r = kd_loss<double>(teacher, student, aux, cfg);
  const Vec analytic = concat({g_kl.data(), r.grad_student.data(), r.grad_auxiliary->data()});

  const auto kl_loss = [&](std::span<const double> x) {
    return kl_channelwise(teacher, FeatureMapD(s, Vec(x.begin(), x.end())), cfg.temperature);
  };
  const auto kd = [&](std::span<const double> x) {
    FeatureMapD st(s), au(s);
    unpack(x, {st.data(), au.data()});
    return kd_loss<double>(teacher, st, au, cfg).loss;
  };
  Vec numeric = numeric_gradient(kl_loss, Vec(student.data().begin(), student.data().end()), step);
  const Vec n2 = numeric_gradient(kd, concat({student.data(), aux.data()}), step);
  numeric.insert(numeric.end(), n2.begin(), n2.end());
  return Trial{analytic, numeric};
}

std::optional<Trial> trial_affinity(Rng& rng, double step) {
  const Shape s{rng.index(1, 4), rng.index(4, 16), rng.index(4, 16)};
  const AffinityConfig cfg{rng.index(1, 4)};
  const auto teacher = rng.map(s, -1.0, 1.0);
  const auto student = rng.map(s, -1.0, 1.0);
  const auto r = affinity_distill(teacher, student, cfg);
  const auto loss = [&](std::span<const double> x) {
    return affinity_distill(teacher, FeatureMapD(s, Vec(x.begin(), x.end())), cfg).loss;
  };
  return Trial{Vec(r.grad_student.data().begin(), r.grad_student.data().end()),
               numeric_gradient(loss, Vec(student.data().begin(), student.data().end()), step)};
}

std::vector<std::uint8_t> random_mask(Rng& rng, std::size_t n, double p) {
  std::vector<std::uint8_t> m(n);
  for (auto& v : m) v = rng.coin(p) ? 1 : 0;
  m[rng.index(0, n - 1)] = 1;
  return m;
}

std::optional<Trial> trial_focal(Rng& rng, double step) {
  const Shape s{1, rng.index(2, 16), rng.index(2, 16)};
  const FocalConfig cfg{rng.uniform(0.1, 0.9), static_cast<double>(rng.index(0, 4)) * 0.75};
  const auto logits = rng.map(s, -4.0, 4.0);
  const auto target = random_mask(rng, s.plane(), 0.3);
  const auto r = focal_loss<double>(logits, target, cfg);
  const auto loss = [&](std::span<const double> x) {
    return focal_loss<double>(FeatureMapD(s, Vec(x.begin(), x.end())), target, cfg).value;
  };
  return Trial{Vec(r.grad.data().begin(), r.grad.data().end()),
               numeric_gradient(loss, Vec(logits.data().begin(), logits.data().end()), step)};
}

std::optional<Trial> trial_balanced_mse(Rng& rng, double step) {
  const Shape s{1, rng.index(2, 16), rng.index(2, 16)};
  const double sigma = rng.uniform(0.5, 2.0);
  const auto pred = rng.map(s, 0.0, 1.0);
  const auto target = rng.map(s, 0.0, 1.0);
  const auto valid = random_mask(rng, s.plane(), 0.5);
  const auto r = balanced_mse<double>(pred, target, valid, sigma);
  const auto loss = [&](std::span<const double> x) {
    return balanced_mse<double>(FeatureMapD(s, Vec(x.begin(), x.end())), target, valid, sigma).value;
  };
  return Trial{Vec(r.grad.data().begin(), r.grad.data().end()),
               numeric_gradient(loss, Vec(pred.data().begin(), pred.data().end()), step)};
}

std::optional<Trial> trial_masked_l1(Rng& rng, double step) {
  const Shape s{2, rng.index(2, 16), rng.index(2, 16)};
  const auto pred = rng.map(s, -2.0, 2.0);
  const auto target = rng.map(s, -2.0, 2.0);
  const auto valid = random_mask(rng, s.plane(), 0.5);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < s.plane(); ++i)
      if (valid[i] && std::abs(pred.channel(c)[i] - target.channel(c)[i]) < 1e-3) return std::nullopt;
  const auto r = masked_l1<double>(pred, target, valid);
  const auto loss = [&](std::span<const double> x) {
    return masked_l1<double>(FeatureMapD(s, Vec(x.begin(), x.end())), target, valid).value;
  };
  return Trial{Vec(r.grad.data().begin(), r.grad.data().end()),
               numeric_gradient(loss, Vec(pred.data().begin(), pred.data().end()), step)};
}

std::optional<Trial> trial_uncertainty_sum(Rng& rng, double step) {
  const std::size_t n = rng.index(1, 4);
  const Vec losses = rng.vector(n, 0.05, 3.0);
  const Vec logvar = rng.vector(n, -2.0, 2.0);
  const auto r = uncertainty_weighted_sum(losses, logvar);
  const auto loss = [&](std::span<const double> x) { return uncertainty_weighted_sum(x.first(n), x.subspan(n)).value; };
  return Trial{concat({r.d_losses, r.d_log_variances}), numeric_gradient(loss, concat({losses, logvar}), step)};
}

std::uint64_t fnv1a(const std::string& s) noexcept {
  std::uint64_t h = 14695981039346656037ull;
  for (const unsigned char ch : s) h = (h ^ ch) * 1099511628211ull;
  return h;
}

struct OpEntry {
  TrialFn fn;
  double threshold;
};

const std::map<std::string, OpEntry>& registry() {
  static const std::map<std::string, OpEntry> ops{
      {"bilinear", {trial_bilinear, 1e-6}},
      {"voxel_pull", {trial_voxel_pull, 1e-5}},
      {"vertical_compress", {trial_vertical_compress, 1e-5}},
      {"sgfm", {trial_sgfm, 1e-5}},
      {"kl", {trial_kl, 1e-5}},
      {"affinity", {trial_affinity, 1e-5}},
      {"focal", {trial_focal, 1e-5}},
      {"balanced_mse", {trial_balanced_mse, 1e-5}},
      {"masked_l1", {trial_masked_l1, 1e-5}},
      {"uncertainty_sum", {trial_uncertainty_sum, 1e-5}},
  };
  return ops;
}

}  // namespace

double relative_error(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::shape_mismatch, "relative_error operands differ in length");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f, std::vector<double> x,
                                     double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + step;
    const double up = f(x);
    x[i] = x0 - step;
    const double down = f(x);
    x[i] = x0;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

const std::vector<std::string>& gradcheck_ops() {
  static const std::vector<std::string> names{"bilinear", "voxel_pull", "vertical_compress", "sgfm",
                                              "kl",       "affinity",   "focal",             "balanced_mse",
                                              "masked_l1", "uncertainty_sum"};
  return names;
}

GradCheckResult gradcheck(const std::string& op, const GradCheckOptions& options) {
  const auto it = registry().find(op);
  require(it != registry().end(), ErrorCode::invalid_config, "unknown gradcheck op '" + op + "'");
  require(options.step > 0.0 && options.instances > 0, ErrorCode::invalid_config,
          "gradcheck needs a positive step and at least one instance");
  const auto start = std::chrono::steady_clock::now();
  GradCheckResult r{op, 0.0, it->second.threshold, 0, 0, 0.0};
  Rng rng(options.seed ^ fnv1a(op));
  while (r.instances < options.instances) {
    const auto trial = it->second.fn(rng, options.step);
    if (!trial) {
      require(++r.redraws < 1000, ErrorCode::invalid_config, "gradcheck '" + op + "' could not draw a smooth instance");
      continue;
    }
    r.max_rel_error = std::max(r.max_rel_error, relative_error(trial->analytic, trial->numeric));
    ++r.instances;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::vector<GradCheckResult> gradcheck_all(const GradCheckOptions& options) {
  std::vector<GradCheckResult> out;
  for (const auto& op : gradcheck_ops()) out.push_back(gradcheck(op, options));
  return out;
}

}  // namespace panobev
