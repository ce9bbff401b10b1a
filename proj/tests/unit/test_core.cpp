// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "panobev/geometry.hpp"
#include "panobev/sampling.hpp"
#include "panobev/tensor.hpp"
#include "support.hpp"

using namespace panobev;

TEST_CASE("feature map layout and shape errors") {
  FeatureMapD f(2, 3, 4);
  f(1, 2, 3) = 7.0;
  CHECK(f.data()[(1 * 3 + 2) * 4 + 3] == 7.0);
  CHECK(f.channel(1)[2 * 4 + 3] == 7.0);
  CHECK(f.shape().size() == 24);

  try {
    FeatureMapD bad(Shape{1, 2, 2}, std::vector<double>(3));
    FAIL("expected ShapeError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::shape_mismatch);
    CHECK(std::string(e.what()).rfind("ShapeError", 0) == 0);
  }
}

TEST_CASE("error names are stable") {
  CHECK(error_name(ErrorCode::shape_mismatch) == "ShapeError");
  CHECK(error_name(ErrorCode::invalid_config) == "InvalidConfig");
  CHECK(error_name(ErrorCode::out_of_fov) == "OutOfFov");
  CHECK(error_name(ErrorCode::empty_supervision) == "EmptySupervision");
  CHECK(error_name(ErrorCode::missing_frame_id) == "MissingFrameId");
  CHECK(error_name(ErrorCode::empty_input) == "EmptyInput");
  CHECK(error_name(ErrorCode::io) == "IoError");
  CHECK(error_name(ErrorCode::parse) == "ParseError");
}

TEST_CASE("cart_to_spherical axis and diagonal cases") {
  auto s = cart_to_spherical({1, 0, 0});
  CHECK(s.azimuth == 0.0);
  CHECK(s.elevation == 0.0);
  CHECK(s.range == 1.0);

  s = cart_to_spherical({0, 0, 1});
  CHECK(s.elevation == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));
  CHECK(s.range == 1.0);

  s = cart_to_spherical({1, 1, 0});
  CHECK(s.azimuth == doctest::Approx(std::atan2(1.0, 1.0)).epsilon(1e-15));
  CHECK(s.azimuth == doctest::Approx(std::numbers::pi / 4).epsilon(1e-15));
  CHECK(s.elevation == 0.0);
  CHECK(s.range == doctest::Approx(std::numbers::sqrt2).epsilon(1e-15));

  s = cart_to_spherical({0, 0, 0});
  CHECK(s.azimuth == 0.0);
  CHECK(s.elevation == 0.0);
  CHECK(s.range == 0.0);

  // y-left: a point on +y is a quarter turn counter-clockwise.
  CHECK(cart_to_spherical({0, 2, 0}).azimuth == doctest::Approx(std::numbers::pi / 2));
}

TEST_CASE("azimuth wraps into [-pi, pi)") {
  CHECK(wrap_azimuth(kPi) == -kPi);
  CHECK(wrap_azimuth(-kPi) == -kPi);
  CHECK(cart_to_spherical({-1, 0, 0}).azimuth == -kPi);
  test::Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double a = wrap_azimuth(rng.uniform(-50.0, 50.0));
    CHECK(a >= -kPi);
    CHECK(a < kPi);
  }
}

TEST_CASE("spherical_to_pixel examples") {
  const AngularGridSpec wide{64, 2048, -0.3, 0.2};
  CHECK(spherical_to_pixel({0.0, 0.0, 1.0}, wide)->u == 1024.0);
  CHECK(spherical_to_pixel({0.0, wide.elevation_max, 1.0}, wide)->v == 0.0);

  const AngularGridSpec small{4, 8, -0.4, 0.4};
  const auto px = spherical_to_pixel({std::numbers::pi / 2, 0.0, 1.0}, small);
  REQUIRE(px);
  // u = (pi/2 + pi) / 2pi * 8, v = (0.4 - 0) / 0.8 * 4
  CHECK(px->u == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(px->v == doctest::Approx(2.0).epsilon(1e-15));

  CHECK_FALSE(spherical_to_pixel({0.0, 0.41, 1.0}, small));
  CHECK_FALSE(spherical_to_pixel({0.0, -0.41, 1.0}, small));
  CHECK(spherical_to_pixel({-kPi, 0.0, 1.0}, small)->u == 0.0);
}

TEST_CASE("grid validation") {
  CHECK_THROWS_AS(AngularGridSpec({0, 4, -1, 1}).validate(), Error);
  CHECK_THROWS_AS(AngularGridSpec({4, 4, 1, 1}).validate(), Error);
  CHECK_NOTHROW(AngularGridSpec({1, 1, -1, 1}).validate());
}

TEST_CASE("spherical round trip recovers the point") {
  test::Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 p{rng.uniform(-80, 80), rng.uniform(-80, 80), rng.uniform(-10, 10)};
    const Vec3 q = spherical_to_cart(cart_to_spherical(p));
    CHECK(norm(q - p) / norm(p) < 1e-9);
  }
}

TEST_CASE("spherical_to_pixel is monotone and inverted by pixel_to_spherical") {
  const AngularGridSpec g{32, 256, -0.5, 0.3};
  test::Rng rng(5);
  std::vector<double> az(200), el(200);
  for (auto& a : az) a = rng.uniform(-kPi, kPi);
  for (auto& e : el) e = rng.uniform(g.elevation_min, g.elevation_max);
  std::sort(az.begin(), az.end());
  std::sort(el.begin(), el.end());
  for (std::size_t i = 1; i < az.size(); ++i) {
    CHECK(spherical_to_pixel({az[i], 0.0, 1}, g)->u >= spherical_to_pixel({az[i - 1], 0.0, 1}, g)->u);
    // Higher elevation maps to a smaller row.
    CHECK(spherical_to_pixel({0.0, el[i], 1}, g)->v <= spherical_to_pixel({0.0, el[i - 1], 1}, g)->v);
  }
  for (std::size_t i = 0; i < az.size(); ++i) {
    const auto px = spherical_to_pixel({az[i], el[i], 1.0}, g);
    const auto s = pixel_to_spherical(*px, g);
    CHECK(s.azimuth == doctest::Approx(az[i]).epsilon(1e-12));
    CHECK(s.elevation == doctest::Approx(el[i]).epsilon(1e-12));
  }
}

TEST_CASE("rigid transform yaw") {
  const auto t = RigidTransform::yaw(std::numbers::pi / 2, {1, 0, 0});
  const Vec3 q = t.apply({1, 0, 0});
  CHECK(q.x == doctest::Approx(1.0));
  CHECK(q.y == doctest::Approx(1.0));
  CHECK(q.z == 0.0);
  const Vec3 p = RigidTransform::identity().apply({1, 2, 3});
  CHECK((p.x == 1.0 && p.y == 2.0 && p.z == 3.0));
}

TEST_CASE("bilinear_sample examples") {
  test::Rng rng(1);
  const auto f = rng.map({2, 5, 7});
  auto s = bilinear_sample<double>(f, 3.0, 2.0);
  CHECK(s[0] == f(0, 2, 3));
  CHECK(s[1] == f(1, 2, 3));

  // Seam of a cyclic map: halfway between the last and first columns.
  s = bilinear_sample<double>(f, 6.5, 1.0);
  CHECK(s[0] == doctest::Approx(0.5 * (f(0, 1, 6) + f(0, 1, 0))).epsilon(1e-15));

  const FeatureMapD quad(Shape{1, 2, 2}, {1, 2, 3, 4});
  CHECK(bilinear_sample<double>(quad, 0.5, 0.5)[0] == 2.5);
  CHECK(bilinear_sample<double>(quad, 0.5, 0.5, HorizontalBoundary::clamp)[0] == 2.5);

  // Rows clamp; clamp mode also clamps columns.
  CHECK(bilinear_sample<double>(quad, 0.0, 5.0)[0] == 3.0);
  CHECK(bilinear_sample<double>(quad, 9.0, 0.0, HorizontalBoundary::clamp)[0] == 2.0);
}

TEST_CASE("bilinear weights are nonnegative and sum to one") {
  test::Rng rng(2);
  for (int i = 0; i < 200000; ++i) {
    const std::size_t h = rng.index(1, 16), w = rng.index(1, 16);
    const auto mode = rng.coin() ? HorizontalBoundary::wrap : HorizontalBoundary::clamp;
    const auto taps = bilinear_taps(h, w, rng.uniform(-3.0, w + 3.0), rng.uniform(-3.0, h + 3.0), mode);
    double sum = 0.0;
    for (const auto& t : taps) {
      CHECK(t.weight >= 0.0);
      CHECK(t.y < h);
      CHECK(t.x < w);
      sum += t.weight;
    }
    CHECK(sum == 1.0);
  }
}

TEST_CASE("a constant neighbourhood samples back exactly") {
  test::Rng rng(6);
  for (int i = 0; i < 2000; ++i) {
    FeatureMapD f(1, 4, 6);
    const double c = rng.uniform(-100, 100);
    f.fill(c);
    CHECK(bilinear_sample<double>(f, rng.uniform(-10, 10), rng.uniform(-1, 4))[0] == c);
    FeatureMapF g(1, 4, 6);
    g.fill(static_cast<float>(c));
    CHECK(bilinear_sample<float>(g, rng.uniform(-10, 10), rng.uniform(-1, 4))[0] == static_cast<float>(c));
  }
}

TEST_CASE("bilinear backward scatters the forward weights") {
  const Shape shape{2, 4, 5};
  const std::vector<double> g{1.0, -2.0};

  auto grads = bilinear_sample_backward<double>(shape, 2.0, 1.0, g);
  FeatureMapD dense(shape);
  for (const auto& e : grads) dense(e.channel, e.y, e.x) += e.value;
  CHECK(std::count_if(dense.data().begin(), dense.data().end(), [](double v) { return v != 0.0; }) == 2);
  CHECK(dense(0, 1, 2) == 1.0);
  CHECK(dense(1, 1, 2) == -2.0);

  grads = bilinear_sample_backward<double>(shape, 0.5, 0.5, std::vector<double>{1.0, 1.0});
  CHECK(grads.size() == 8);
  for (const auto& e : grads) CHECK(e.value == 0.25);

  // Adjoint identity <sample(f), w> == <f, scatter(w)> on random inputs.
  test::Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const Shape s{rng.index(1, 4), rng.index(1, 16), rng.index(1, 16)};
    const auto f = rng.map(s);
    std::vector<double> w(s.channels);
    for (auto& v : w) v = rng.uniform(-1, 1);
    const double u = rng.uniform(0, static_cast<double>(s.width)), v = rng.uniform(0, static_cast<double>(s.height - 1));
    FeatureMapD scattered(s);
    bilinear_scatter_add<double>(scattered, u, v, w);
    const double lhs = test::dot(bilinear_sample<double>(f, u, v), w);
    const double rhs = test::dot(f.data(), scattered.data());
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-13));
    double total = 0.0;
    for (const auto& e : bilinear_sample_backward<double>(s, u, v, std::vector<double>(s.channels, 1.0)))
      if (e.channel == 0) total += e.value;
    CHECK(total == 1.0);
  }
}
