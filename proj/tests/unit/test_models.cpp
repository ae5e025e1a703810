#include "doctest.h"

#include <cmath>
#include <random>

#include "cfr/models.hpp"

using namespace cfr;

namespace {
constexpr double kSigmoid2 = 0.8807970779778823;  // 1 / (1 + e^-2)
}

TEST_CASE("linear-sigmoid predictions") {
  const Model m = Model::linear_sigmoid({1.0, 0.0});
  CHECK(m.predict(std::vector{0.0, 5.0}) == 0.5);
  CHECK(m.predict(std::vector{2.0, 0.0}) == doctest::Approx(kSigmoid2).epsilon(1e-15));
  CHECK(m.margin(std::vector{2.0, 0.0}) == 2.0);
  CHECK_THROWS_AS(m.predict(std::vector{1.0}), Error);
  try {
    m.predict(std::vector{1.0, 2.0, 3.0});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Input);
  }
}

TEST_CASE("constant model") {
  const Model c = Model::constant(3, 0.8);
  CHECK(c.predict(std::vector{0.0, 0.0, 0.0}) == 0.8);
  CHECK(c.predict(std::vector{-40.0, 7.0, 1e6}) == 0.8);
  CHECK(lipschitz_constant(c).value == 0.0);
  CHECK_FALSE(lipschitz_constant(c).estimate);
}

TEST_CASE("predict stays in [0,1] under saturation") {
  const Model m = Model::linear_sigmoid({3.0, -2.0}, 0.5);
  for (double s : {1e6, -1e6, 1e300, -1e300}) {
    const double p = m.predict(std::vector{s, -s});
    CHECK(std::isfinite(p));
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
}

TEST_CASE("lipschitz constants") {
  CHECK(lipschitz_constant(Model::linear_sigmoid({4.0, 0.0})).value == 1.0);
  CHECK(lipschitz_constant(Model::linear_sigmoid({3.0, 4.0})).value == 1.25);
  // bias does not change the constant
  CHECK(lipschitz_constant(Model::linear_sigmoid({3.0, 4.0}, 2.0)).value == 1.25);

  // Empirical estimate on the same function never exceeds the closed form.
  const Model w = Model::wrapped(
      2, [](std::span<const double> x) { return sigmoid(3.0 * x[0] + 4.0 * x[1]); }, std::nullopt,
      Box{{-2.0, -2.0}, {2.0, 2.0}});
  const LipschitzResult est = lipschitz_constant(w);
  CHECK(est.estimate);
  CHECK(est.value <= 1.25 + 1e-6);
  CHECK(est.value >= 1.0);

  const Model no_domain = Model::wrapped(1, [](std::span<const double> x) { return sigmoid(x[0]); });
  try {
    lipschitz_constant(no_domain);
    FAIL("expected a configuration error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Configuration);
  }
}

TEST_CASE("declared constant bounds every sampled pair") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Model m = Model::linear_sigmoid({g(rng), g(rng)}, g(rng));
    const double L = *m.declared_lipschitz();
    for (int i = 0; i < 500; ++i) {
      const std::vector x{g(rng), g(rng)}, y{g(rng), g(rng)};
      CHECK(std::abs(m.predict(x) - m.predict(y)) <= L * la::dist2(x, y) + 1e-12);
    }
  }
}

TEST_CASE("ensemble lipschitz") {
  const std::vector<Model> two{Model::linear_sigmoid({4.0, 0.0}), Model::linear_sigmoid({2.0, 0.0})};
  CHECK(ensemble_lipschitz(two).value == 1.0);
  const std::vector<Model> one{Model::linear_sigmoid({2.0, 0.0})};
  CHECK(ensemble_lipschitz(one).value == 0.5);

  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  std::vector<Model> models;
  double expect = 0.0, previous = 0.0;
  for (int i = 0; i < 10; ++i) {
    const Vector w{g(rng), g(rng)};
    expect = std::max(expect, std::hypot(w[0], w[1]) / 4.0);
    models.push_back(Model::linear_sigmoid(w));
    const double now = ensemble_lipschitz(models).value;
    CHECK(now >= previous);  // monotone in the member set
    previous = now;
  }
  CHECK(previous == doctest::Approx(expect).epsilon(1e-15));

  try {
    ensemble_lipschitz(std::span<const Model>{});
    FAIL("expected an input error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Input);
  }
}

TEST_CASE("tabulated model interpolates") {
  // f(x, y) = x + 2y on [0,1]^2 is reproduced exactly by bilinear interpolation.
  const Model t = Model::tabulated(Box{{0.0, 0.0}, {1.0, 1.0}}, {2, 2}, {0.0, 0.2, 0.1, 0.3});
  CHECK(t.predict(std::vector{0.0, 0.0}) == doctest::Approx(0.0));
  CHECK(t.predict(std::vector{1.0, 1.0}) == doctest::Approx(0.3));
  CHECK(t.predict(std::vector{0.5, 0.5}) == doctest::Approx(0.15));
  CHECK(t.predict(std::vector{1.0, 0.0}) == doctest::Approx(0.1));
  // clamped outside the box
  CHECK(t.predict(std::vector{5.0, -5.0}) == doctest::Approx(0.1));
  const Vector grad = t.gradient(std::vector{0.3, 0.6});
  CHECK(grad[0] == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(grad[1] == doctest::Approx(0.2).epsilon(1e-6));
}

TEST_CASE("output shift clamps") {
  const Model base = Model::constant(1, 0.95);
  CHECK(Model::output_shift(base, 0.1).predict(std::vector{0.0}) == 1.0);
  CHECK(Model::output_shift(base, -0.2).predict(std::vector{0.0}) == doctest::Approx(0.75));
  const Model lin = Model::linear_sigmoid({2.0});
  CHECK(*Model::output_shift(lin, 0.01).declared_lipschitz() == 0.5);
}

TEST_CASE("linear gradient matches finite differences") {
  const Model m = Model::linear_sigmoid({1.5, -0.5}, 0.2);
  const std::vector x{0.3, -0.7};
  const Vector g = m.gradient(x);
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector a = x, b = x;
    a[i] += 1e-6;
    b[i] -= 1e-6;
    CHECK(g[i] == doctest::Approx((m.predict(a) - m.predict(b)) / 2e-6).epsilon(1e-6));
  }
}
