// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "panobev/distill.hpp"
#include "reference/reference.hpp"
#include "support.hpp"

using namespace panobev;

namespace {

double max_deviation_from_uniform(const FeatureMapD& p) {
  const double u = 1.0 / static_cast<double>(p.shape().plane());
  double m = 0.0;
  for (const double v : p.data()) m = std::max(m, std::abs(v - u));
  return m;
}

double fd_kl(FeatureMapD t, FeatureMapD s, double temp, std::size_t i) {
  const double x0 = s.data()[i];
  s.data()[i] = x0 + 1e-5;
  const double up = kl_channelwise(t, s, temp);
  s.data()[i] = x0 - 1e-5;
  const double down = kl_channelwise(t, s, temp);
  return (up - down) / 2e-5;
}

}  // namespace

TEST_CASE("softmax closed forms") {
  const FeatureMapD f(Shape{1, 1, 2}, {0.0, std::log(3.0)});
  const auto p = channel_softmax(f, 1.0);
  CHECK(p(0, 0, 0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(p(0, 0, 1) == doctest::Approx(0.75).epsilon(1e-15));

  const auto u = channel_softmax(FeatureMapD(2, 3, 5, 7.5), 4.0);
  for (const double v : u.data()) CHECK(v == doctest::Approx(1.0 / 15).epsilon(1e-15));

  CHECK_THROWS_AS(channel_softmax(f, 0.0), Error);
  CHECK_THROWS_AS(channel_softmax(f, -1.0), Error);
}

TEST_CASE("higher temperature flattens the distribution") {
  test::Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto f = rng.map({1, 4, 4}, -3, 3);
    double previous = max_deviation_from_uniform(channel_softmax(f, 1.0));
    CHECK(max_deviation_from_uniform(channel_softmax(f, 100.0)) < previous);
    for (const double t : {2.0, 5.0, 20.0, 100.0}) {
      const double d = max_deviation_from_uniform(channel_softmax(f, t));
      CHECK(d <= previous);
      previous = d;
    }
  }
}

TEST_CASE("softmax sums to one, is positive and shift invariant") {
  test::Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Shape s{rng.index(1, 4), rng.index(1, 8), rng.index(1, 8)};
    auto f = rng.map(s, -20, 20);
    const double t = rng.uniform(0.1, 10);
    const auto p = channel_softmax(f, t);
    for (std::size_t c = 0; c < s.channels; ++c) {
      double sum = 0.0;
      for (const double v : p.channel(c)) {
        CHECK(v > 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
      const double shift = rng.uniform(-100, 100);
      for (auto& v : f.channel(c)) v += shift;
    }
    CHECK(test::max_abs_diff(channel_softmax(f, t).data(), p.data()) < 1e-9);
  }
}

TEST_CASE("KL of a hand-computed pair") {
  const FeatureMapD t(Shape{1, 1, 2}, {0.0, std::log(3.0)});
  const FeatureMapD s(Shape{1, 1, 2}, {0.0, 0.0});
  const double expected = 0.25 * std::log(0.5) + 0.75 * std::log(1.5);
  const double kl = kl_channelwise(t, s, 1.0);
  CHECK(std::abs(kl - 0.130812) < 1e-6);
  CHECK(kl == doctest::Approx(expected).epsilon(1e-13));
  // Temperature prefactor: logits scaled with T keep the distributions, loss scales by T^2.
  const FeatureMapD t4(Shape{1, 1, 2}, {0.0, 4 * std::log(3.0)});
  CHECK(kl_channelwise(t4, s, 4.0) == doctest::Approx(16 * expected).epsilon(1e-12));
}

TEST_CASE("KL is zero on equal inputs and nonnegative otherwise") {
  test::Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const Shape s{rng.index(1, 3), rng.index(1, 5), rng.index(1, 5)};
    const auto a = rng.map(s, -5, 5), b = rng.map(s, -5, 5);
    const double t = rng.uniform(0.5, 8);
    CHECK(std::abs(kl_channelwise(a, a, t)) < 1e-12);
    CHECK(kl_channelwise(a, b, t) >= 0.0);
  }
}

TEST_CASE("KL agrees with the long-double reference") {
  test::Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Shape s{rng.index(1, 4), rng.index(1, 8), rng.index(1, 8)};
    const auto a = rng.map(s, -10, 10), b = rng.map(s, -10, 10);
    const double t = rng.uniform(0.5, 8);
    CHECK(kl_channelwise(a, b, t) == doctest::Approx(reference::kl_channelwise(a, b, t)).epsilon(1e-11));
  }
}

TEST_CASE("KL gradient") {
  test::Rng rng(5);
  const auto a = rng.map({2, 3, 4});
  const auto zero = kl_backward(a, a, 4.0);
  for (const double v : zero.data()) CHECK(std::abs(v) < 1e-15);

  for (int trial = 0; trial < 20; ++trial) {
    const Shape s{rng.index(1, 3), rng.index(1, 5), rng.index(1, 5)};
    const auto t = rng.map(s, -2, 2), st = rng.map(s, -2, 2);
    const double temp = rng.uniform(0.5, 5);
    const auto g = kl_backward(t, st, temp);
    for (std::size_t c = 0; c < s.channels; ++c) {
      double sum = 0.0;
      for (const double v : g.channel(c)) sum += v;
      CHECK(std::abs(sum) < 1e-10);
    }
    std::vector<double> numeric(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) numeric[i] = fd_kl(t, st, temp, i);
    double diff = 0.0, na = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      diff += (g.data()[i] - numeric[i]) * (g.data()[i] - numeric[i]);
      na += g.data()[i] * g.data()[i];
    }
    CHECK(std::sqrt(diff) <= 1e-5 * std::max(std::sqrt(na), 1e-8));
  }
}

TEST_CASE("kd_loss composes the two KL terms") {
  test::Rng rng(6);
  const auto t = rng.map({3, 4, 4}), s = rng.map({3, 4, 4}), a = rng.map({3, 4, 4});
  DistillConfig cfg;
  cfg.temperature = 2.0;

  cfg.alpha1 = 1.0;
  auto r = kd_loss<double>(t, s, std::nullopt, cfg);
  CHECK(r.loss == kl_channelwise(t, s, 2.0));
  CHECK(r.teacher_auxiliary == 0.0);
  CHECK_FALSE(r.grad_auxiliary);
  CHECK(r.grad_student == kl_backward(t, s, 2.0));

  cfg.alpha2 = 1.0;
  r = kd_loss<double>(t, s, a, cfg);
  CHECK(r.loss == kl_channelwise(t, s, 2.0) + kl_channelwise(t, a, 2.0));
  REQUIRE(r.grad_auxiliary);
  CHECK(*r.grad_auxiliary == kl_backward(t, a, 2.0));

  CHECK(std::abs(kd_loss<double>(t, t, t, cfg).loss) < 1e-12);

  // Linear in the weights.
  for (int trial = 0; trial < 20; ++trial) {
    cfg.alpha1 = rng.uniform(0, 3);
    cfg.alpha2 = rng.uniform(0, 3);
    r = kd_loss<double>(t, s, a, cfg);
    CHECK(r.loss == doctest::Approx(cfg.alpha1 * r.teacher_student + cfg.alpha2 * r.teacher_auxiliary).epsilon(1e-14));
    for (std::size_t i = 0; i < s.size(); ++i)
      CHECK(r.grad_student.data()[i] ==
            doctest::Approx(cfg.alpha1 * kl_backward(t, s, 2.0).data()[i]).epsilon(1e-12));
  }

  cfg.alpha1 = -1;
  CHECK_THROWS_AS(kd_loss<double>(t, s, a, cfg), Error);
  cfg.alpha1 = 1;
  cfg.temperature = 0;
  CHECK_THROWS_AS(kd_loss<double>(t, s, a, cfg), Error);
  cfg.temperature = 1;
  CHECK_THROWS_AS(kd_loss<double>(t, FeatureMapD(3, 4, 5), a, cfg), Error);
}

TEST_CASE("auxiliary gradient routing") {
  test::Rng rng(7);
  auto p = SgfmParams<double>::zeros(2, 2);
  for (auto& w : p.gate_weights) w = rng.uniform(-1, 1);
  for (auto& w : p.refine_weights) w = rng.uniform(-0.5, 0.5);
  const auto cam = rng.map({2, 4, 4}), teacher = rng.map({2, 4, 4});
  SgfmCache<double> cache;
  const auto aux = auxiliary_forward(cam, teacher, p, &cache);
  const auto r = kd_loss<double>(rng.map({2, 4, 4}), rng.map({2, 4, 4}), aux, DistillConfig{});
  const auto direct = auxiliary_backward(cache, *r.grad_auxiliary, p);

  const auto into = route_auxiliary_gradient(cache, *r.grad_auxiliary, p, AuxGradientRoute::into_student);
  CHECK(into.student_camera == direct.student_camera);
  CHECK(into.params.gate_weights == direct.params.gate_weights);

  const auto only = route_auxiliary_gradient(cache, *r.grad_auxiliary, p, AuxGradientRoute::auxiliary_only);
  for (const double v : only.student_camera.data()) CHECK(v == 0.0);
  CHECK(only.params.refine_weights == direct.params.refine_weights);
}

TEST_CASE("affinity distillation") {
  test::Rng rng(8);
  const auto t = rng.map({3, 8, 8});
  CHECK(affinity_distill(t, t).loss == 0.0);

  auto scaled = t;
  for (auto& v : scaled.data()) v *= 3.7;
  CHECK(affinity_distill(t, scaled, {1}).loss < 1e-28);

  // Per-position positive scaling.
  auto per_pos = t;
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      const double k = rng.uniform(0.1, 10);
      for (std::size_t c = 0; c < 3; ++c) per_pos(c, y, x) *= k;
    }
  CHECK(affinity_distill(t, per_pos, {2}).loss < 1e-28);

  const auto r = affinity_distill(t, rng.map({3, 8, 8}), {4});
  CHECK(r.positions == 4);
  CHECK(r.loss > 0.0);
}

TEST_CASE("affinity matches a naive double loop on a 2x2x2 case") {
  test::Rng rng(9);
  const auto t = rng.map({2, 2, 2}), s = rng.map({2, 2, 2});
  const auto unit = [](const FeatureMapD& f, std::size_t y, std::size_t x) {
    const double n = std::sqrt(f(0, y, x) * f(0, y, x) + f(1, y, x) * f(1, y, x));
    return std::array<double, 2>{f(0, y, x) / n, f(1, y, x) / n};
  };
  double total = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      const auto ti = unit(t, i / 2, i % 2), tj = unit(t, j / 2, j % 2);
      const auto si = unit(s, i / 2, i % 2), sj = unit(s, j / 2, j % 2);
      const double at = ti[0] * tj[0] + ti[1] * tj[1];
      const double as = si[0] * sj[0] + si[1] * sj[1];
      row += (as - at) * (as - at);
    }
    total += row;
  }
  CHECK(affinity_distill(t, s, {1}).loss == total * (1.0 / 16.0));
}

TEST_CASE("affinity flags zero-norm vectors and its gradient matches finite differences") {
  test::Rng rng(10);
  auto t = rng.map({2, 4, 4});
  auto s = rng.map({2, 4, 4});
  t(0, 0, 0) = t(1, 0, 0) = 0.0;
  s(0, 2, 2) = s(1, 2, 2) = 0.0;
  const auto r = affinity_distill(t, s, {2});
  CHECK(r.zero_norm_teacher == 1);
  CHECK(r.zero_norm_student == 1);
  CHECK(std::isfinite(r.loss));
  CHECK(r.grad_student(0, 2, 2) == 0.0);

  const auto s2 = rng.map({2, 4, 4});
  const auto g = affinity_distill(t, s2, {1}).grad_student;
  for (std::size_t i = 0; i < s2.size(); ++i) {
    auto up = s2, down = s2;
    up.data()[i] += 1e-6;
    down.data()[i] -= 1e-6;
    const double fd = (affinity_distill(t, up, {1}).loss - affinity_distill(t, down, {1}).loss) / 2e-6;
    CHECK(g.data()[i] == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
  }
  CHECK_THROWS_AS(affinity_distill(t, s, {0}), Error);
}
