// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "panobev/task_losses.hpp"
#include "support.hpp"

using namespace panobev;

namespace {

std::vector<std::uint8_t> random_mask(test::Rng& rng, std::size_t n, double p = 0.5) {
  std::vector<std::uint8_t> m(n);
  for (auto& v : m) v = rng.coin(p) ? 1 : 0;
  m[rng.index(0, n - 1)] = 1;
  return m;
}

template <typename Loss>
double fd_rel_error(FeatureMapD x, const FeatureMapD& analytic, Loss loss) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x.data()[i];
    x.data()[i] = x0 + 1e-5;
    const double up = loss(x);
    x.data()[i] = x0 - 1e-5;
    const double down = loss(x);
    x.data()[i] = x0;
    const double n = (up - down) / 2e-5;
    const double a = analytic.data()[i];
    diff += (a - n) * (a - n);
    na += a * a;
    nn += n * n;
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
}

}  // namespace

TEST_CASE("focal loss closed forms") {
  const FeatureMapD zero(1, 1, 1);
  const std::vector<std::uint8_t> one{1};
  CHECK(focal_loss(zero, one, {0.25, 2.0}).value == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-14));
  CHECK(std::abs(focal_loss(zero, one, {0.25, 2.0}).value - 0.043322) < 1e-6);

  test::Rng rng(1);
  const auto logits = rng.map({1, 4, 5}, -4, 4);
  const auto target = random_mask(rng, 20);
  double bce = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits.data()[i]));
    bce += target[i] ? -std::log(p) : -std::log(1.0 - p);
  }
  bce /= 20.0;
  CHECK(focal_loss(logits, target, {0.5, 0.0}).value == doctest::Approx(0.5 * bce).epsilon(1e-13));
}

TEST_CASE("focal loss is nonnegative and decreases with the correct-class margin") {
  const std::vector<std::uint8_t> pos{1}, neg{0};
  double prev_pos = INFINITY, prev_neg = INFINITY;
  for (double m = -10; m <= 40; m += 0.5) {
    const double lp = focal_loss(FeatureMapD(1, 1, 1, m), pos).value;
    const double ln = focal_loss(FeatureMapD(1, 1, 1, -m), neg).value;
    CHECK(lp >= 0.0);
    CHECK(ln >= 0.0);
    CHECK(lp <= prev_pos);
    CHECK(ln <= prev_neg);
    CHECK(std::isfinite(lp));
    prev_pos = lp;
    prev_neg = ln;
  }
  CHECK(prev_pos < 1e-15);
  // Extreme logits stay finite.
  CHECK(std::isfinite(focal_loss(FeatureMapD(1, 1, 1, -800.0), pos).value));
  CHECK(std::isfinite(focal_loss(FeatureMapD(1, 1, 1, 800.0), neg).value));
}

TEST_CASE("focal loss gradient matches finite differences") {
  test::Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const FocalConfig cfg{rng.uniform(0.05, 0.95), rng.uniform(0, 4)};
    const auto x = rng.map({1, rng.index(1, 6), rng.index(1, 6)}, -4, 4);
    const auto t = random_mask(rng, x.size());
    const auto r = focal_loss(x, t, cfg);
    CHECK(fd_rel_error(x, r.grad, [&](const FeatureMapD& z) { return focal_loss(z, t, cfg).value; }) < 1e-5);
  }
}

TEST_CASE("balanced MSE examples") {
  const std::vector<std::uint8_t> single{0, 1, 0};
  const FeatureMapD p(Shape{1, 1, 3}, {0.3, 0.7, 0.1});
  const FeatureMapD t(Shape{1, 1, 3}, {0.2, 0.4, 0.9});
  CHECK(balanced_mse(p, t, single).value == 0.0);

  const std::vector<std::uint8_t> both{1, 1};
  const FeatureMapD p2(Shape{1, 1, 2}, {0.6, 0.6});
  const FeatureMapD t2(Shape{1, 1, 2}, {0.25, 0.25});
  CHECK(balanced_mse(p2, t2, both, 0.7).value == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  const std::vector<std::uint8_t> none{0, 0, 0};
  try {
    balanced_mse(p, t, none);
    FAIL("expected EmptySupervision");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::empty_supervision);
  }
  CHECK_THROWS_AS(balanced_mse(p, t, single, 0.0), Error);
}

TEST_CASE("balanced MSE gradient matches finite differences") {
  test::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s{1, rng.index(1, 6), rng.index(1, 6)};
    const auto x = rng.map(s, 0, 1), t = rng.map(s, 0, 1);
    const auto v = random_mask(rng, s.size(), 0.7);
    const double sigma = rng.uniform(0.2, 2);
    const auto r = balanced_mse(x, t, v, sigma);
    CHECK(fd_rel_error(x, r.grad, [&](const FeatureMapD& z) { return balanced_mse(z, t, v, sigma).value; }) < 1e-5);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (!v[i]) CHECK(r.grad.data()[i] == 0.0);
  }
}

TEST_CASE("masked L1 examples and naive loop") {
  test::Rng rng(4);
  const auto p = rng.map({2, 4, 4});
  const auto v = random_mask(rng, 16);
  CHECK(masked_l1(p, p, v).value == 0.0);

  auto shifted = p;
  for (auto& x : shifted.data()) x += 0.5;
  CHECK(masked_l1(shifted, p, v).value == doctest::Approx(0.5).epsilon(1e-14));

  const auto t = rng.map({2, 4, 4});
  std::size_t n = 0;
  double acc = 0.0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 16; ++i)
      if (v[i]) acc += std::abs(p.channel(c)[i] - t.channel(c)[i]);
  n = static_cast<std::size_t>(std::count(v.begin(), v.end(), 1));
  const auto r = masked_l1(p, t, v);
  CHECK(r.value == acc / static_cast<double>(2 * n));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 16; ++i) {
      const double d = p.channel(c)[i] - t.channel(c)[i];
      const double expected = v[i] ? (d > 0 ? 1.0 : -1.0) / static_cast<double>(2 * n) : 0.0;
      CHECK(r.grad.channel(c)[i] == expected);
    }
  CHECK(masked_l1(p, p, v).grad.data()[0] == 0.0);
  CHECK_THROWS_AS(masked_l1(p, t, std::vector<std::uint8_t>(16, 0)), Error);
}

TEST_CASE("masked L1 gradient matches finite differences away from ties") {
  test::Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s{2, rng.index(1, 5), rng.index(1, 5)};
    const auto x = rng.map(s), t = rng.map(s);
    bool near_tie = false;
    for (std::size_t i = 0; i < s.size(); ++i) near_tie |= std::abs(x.data()[i] - t.data()[i]) < 1e-3;
    if (near_tie) continue;
    const auto v = random_mask(rng, s.plane());
    CHECK(fd_rel_error(x, masked_l1(x, t, v).grad, [&](const FeatureMapD& z) { return masked_l1(z, t, v).value; }) <
          1e-5);
  }
}

TEST_CASE("uncertainty weighting") {
  const std::array<double, 3> losses{0.7, 1.3, 0.2};
  auto r = uncertainty_weighted_sum(losses, LossWeights{});
  CHECK(r.value == 0.7 + 1.3 + 0.2);

  test::Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> L(rng.index(1, 5)), s(L.size());
    for (auto& v : L) v = rng.uniform(0.01, 5);
    for (auto& v : s) v = rng.uniform(-2, 2);
    r = uncertainty_weighted_sum(L, s);
    for (std::size_t i = 0; i < L.size(); ++i) {
      CHECK(r.d_log_variances[i] == doctest::Approx(1.0 - std::exp(-s[i]) * L[i]).epsilon(1e-15));
      CHECK(r.d_losses[i] == std::exp(-s[i]));
      auto up = s, down = s;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      const double fd = (uncertainty_weighted_sum(L, up).value - uncertainty_weighted_sum(L, down).value) / 2e-6;
      CHECK(r.d_log_variances[i] == doctest::Approx(fd).epsilon(1e-6));
    }
    // Stationary at s = ln L.
    std::vector<double> opt(L.size());
    for (std::size_t i = 0; i < L.size(); ++i) opt[i] = std::log(L[i]);
    for (const double d : uncertainty_weighted_sum(L, opt).d_log_variances) CHECK(std::abs(d) < 1e-15);

    // Separable and permutation invariant.
    auto L2 = L;
    L2[0] *= 3.0;
    const auto r2 = uncertainty_weighted_sum(L2, s);
    for (std::size_t i = 1; i < L.size(); ++i) CHECK(r2.d_log_variances[i] == r.d_log_variances[i]);
    std::vector<std::size_t> perm(L.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    std::vector<double> Lp, sp;
    for (const auto k : perm) {
      Lp.push_back(L[k]);
      sp.push_back(s[k]);
    }
    CHECK(uncertainty_weighted_sum(Lp, sp).value == doctest::Approx(r.value).epsilon(1e-14));
  }
  CHECK_THROWS_AS(uncertainty_weighted_sum(std::vector<double>{1.0}, std::vector<double>{}), Error);
}

TEST_CASE("total loss adds values and per-tensor gradients") {
  test::Rng rng(7);
  LossTerm<double> kd{0.4, {{"student", rng.map({2, 3, 3})}}};
  LossTerm<double> stu{1.1, {{"student", rng.map({2, 3, 3})}, {"heads", rng.map({1, 3, 3})}}};
  const auto t = total_loss(kd, stu);
  CHECK(t.value == 0.4 + 1.1);
  REQUIRE(t.grads.size() == 2);
  for (std::size_t i = 0; i < 18; ++i)
    CHECK(t.grads.at("student").data()[i] == kd.grads.at("student").data()[i] + stu.grads.at("student").data()[i]);
  CHECK(t.grads.at("heads") == stu.grads.at("heads"));

  const auto only_stu = total_loss(LossTerm<double>{}, stu);
  CHECK(only_stu.value == stu.value);
  CHECK(only_stu.grads == stu.grads);
  const auto only_kd = total_loss(kd, LossTerm<double>{});
  CHECK(only_kd.value == kd.value);

  kd.grads["student"] = FeatureMapD(1, 1, 1);
  CHECK_THROWS_AS(total_loss(kd, stu), Error);
}

TEST_CASE("total loss gradient equals the sum of per-term finite differences") {
  test::Rng rng(8);
  const auto x = rng.map({1, 3, 4}, -2, 2);
  const auto seg = random_mask(rng, 12);
  const auto tgt = rng.map({1, 3, 4}, 0, 1);
  const auto v = random_mask(rng, 12, 0.8);
  // Both terms read the same tensor x.
  const auto a = focal_loss(x, seg);
  const auto b = balanced_mse(x, tgt, v);
  const auto t = total_loss(LossTerm<double>{a.value, {{"x", a.grad}}}, LossTerm<double>{b.value, {{"x", b.grad}}});
  CHECK(fd_rel_error(x, t.grads.at("x"), [&](const FeatureMapD& z) {
          return focal_loss(z, seg).value + balanced_mse(z, tgt, v).value;
        }) < 1e-5);
}
