#include "doctest.h"

#include <cmath>

#include "cfr/stability.hpp"

using namespace cfr;

TEST_CASE("R and Rhat on constant models") {
  const Model c = Model::constant(2, 0.8);
  StabilityConfig cfg;
  cfg.k = 50;
  cfg.seed = 1;
  const std::vector x{0.3, 0.3};
  CHECK(stability_R(c, 0.0, x, cfg) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(stability_Rhat(c, x, cfg) == doctest::Approx(0.8).epsilon(1e-15));
  cfg.tau = 0.7;
  CHECK(robustness_test(c, x, cfg).pass);
  cfg.tau = 0.9;
  CHECK_FALSE(robustness_test(c, x, cfg).pass);
}

TEST_CASE("direct formula cases") {
  const Model m = Model::linear_sigmoid({1.0, 0.0});
  const std::vector<FeatureVector> at_x{{0.5, 0.5}};
  CHECK(stability_R(m, 0.25, std::vector{0.5, 0.5}, at_x) == m.predict(std::vector{0.5, 0.5}));

  // m(x) = 0.5 and every sample has m = 1
  const Model step = Model::wrapped(1, [](std::span<const double> x) { return x[0] == 0.0 ? 0.5 : 1.0; });
  const std::vector<FeatureVector> far{{1.0}, {2.0}, {3.0}};
  CHECK(stability_Rhat(step, std::vector{0.0}, far) == 0.5);
}

TEST_CASE("R matches an independent computation") {
  const Model m = Model::linear_sigmoid({1.0, 0.0});
  StabilityConfig cfg;
  cfg.k = 1000;
  cfg.sigma2 = 0.25;
  cfg.seed = 99;
  const std::vector x{0.0, 0.0};
  const auto samples = draw_neighbourhood(x, cfg);
  REQUIRE(samples.size() == 1000);
  double sum = 0.0, hat = 0.0;
  for (const auto& s : samples) {
    const double p = 1.0 / (1.0 + std::exp(-s[0]));
    sum += p - 0.25 * std::sqrt(s[0] * s[0] + s[1] * s[1]);
    hat += p - std::abs(0.5 - p);
  }
  const double R = stability_R(m, 0.25, x, cfg);
  CHECK(std::abs(R - sum / 1000.0) < 1e-12);
  CHECK(std::abs(stability_Rhat(m, x, cfg) - hat / 1000.0) < 1e-12);
  CHECK(stability_Rhat(m, x, cfg) >= R);
  CHECK(draw_neighbourhood(x, cfg) == samples);
}

TEST_CASE("pass is monotone in tau") {
  const Model m = Model::linear_sigmoid({2.0, 1.0});
  StabilityConfig cfg;
  cfg.seed = 4;
  const std::vector x{0.4, 0.1};
  bool previous = true;
  for (double tau = 0.0; tau <= 1.0; tau += 0.02) {
    cfg.tau = tau;
    const bool now = robustness_test(m, x, cfg).pass;
    CHECK((previous || !now));
    previous = now;
  }
}

TEST_CASE("point-mass limit") {
  const Model m = Model::linear_sigmoid({2.0, 1.0});
  StabilityConfig cfg;
  cfg.sigma2 = 1e-18;
  const std::vector x{0.1, 0.3};
  CHECK(std::abs(stability_Rhat(m, x, cfg) - m.predict(x)) < 1e-6);
}

TEST_CASE("psi statistic") {
  const std::vector<FeatureVector> s{{0.0}, {1.0}, {2.0}};
  const Model m = Model::linear_sigmoid({1.0});
  CHECK(psi_statistic(m, m, s) == 0.0);
  CHECK(psi_statistic(Model::constant(1, 0.9), Model::constant(1, 0.2), s) == doctest::Approx(0.7).epsilon(1e-15));
  try {
    psi_statistic(m, m, std::vector<FeatureVector>{});
    FAIL("expected an input error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Input);
  }
}

TEST_CASE("custom sampling distribution") {
  StabilityConfig cfg;
  cfg.sampling = Distribution::uniform_box({-0.1, -0.1}, {0.1, 0.1});
  cfg.k = 200;
  cfg.seed = 8;
  const std::vector x{3.0, -3.0};
  for (const auto& s : draw_neighbourhood(x, cfg)) {
    CHECK(std::abs(s[0] - 3.0) <= 0.1);
    CHECK(std::abs(s[1] + 3.0) <= 0.1);
  }
  StabilityConfig bad;
  bad.k = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("report") {
  const Model m = Model::linear_sigmoid({2.0, 1.0});
  StabilityConfig cfg;
  cfg.seed = 2;
  cfg.tau = 0.5;
  const Model shifted = Model::output_shift(m, -0.05);
  const StabilityReport r = evaluate_stability(m, std::vector{0.5, 0.5}, cfg, 0.6, &shifted);
  REQUIRE(r.R);
  REQUIRE(r.psi);
  CHECK(r.rhat >= *r.R);
  CHECK(*r.psi == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(r.pass == (r.rhat >= 0.5));
}
