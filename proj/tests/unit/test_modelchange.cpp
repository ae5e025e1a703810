#include "doctest.h"

#include <cmath>

#include "cfr/bounds.hpp"
#include "cfr/modelchange.hpp"
#include "cfr/stability.hpp"

using namespace cfr;

namespace {

RetrainSetup small_setup(std::size_t n, std::uint64_t seed) {
  const LabeledDistribution src{Distribution::gaussian({0.0, 0.0}, 0.1), Model::linear_sigmoid({4.0, -3.0})};
  RetrainSetup s{BoundedProblem::logistic(1.0, 2), synthesize_dataset(src, n, 1.0, seed), constant_steps(n, 4.0),
                 {0.0, 0.0}, src};
  return s;
}

std::vector<FeatureVector> grid_points() {
  std::vector<FeatureVector> pts;
  for (int i = -3; i <= 3; ++i)
    for (int j = -3; j <= 3; ++j) pts.push_back({0.1 * i, 0.1 * j});
  return pts;
}

}  // namespace

TEST_CASE("degenerate generators reproduce the original") {
  const RetrainSetup setup = small_setup(60, 1);
  GeneratorConfig g;
  g.kind = GeneratorKind::RetrainPerturbed;
  g.r = 0;
  const ModelChangeEnsemble ens = generate_ensemble(g, setup, 5, 2);
  REQUIRE(ens.size() == 5);
  for (const Model& m : ens.members) CHECK(m.weights() == ens.original.weights());

  GeneratorConfig ball;
  ball.kind = GeneratorKind::ParameterBall;
  ball.radius = 0.0;
  const Model base = Model::linear_sigmoid({1.0, -1.0});
  for (const Model& m : generate_ensemble(ball, base, 4, 3).members) CHECK(m.weights() == base.weights());

  const ModelChangeProfile prof = estimate_profile(ens, Distribution::gaussian({0.0, 0.0}, 0.1), {2000, 20, 200}, 4);
  CHECK(prof.delta.value == 0.0);
  CHECK(prof.regime == Regime::NomcConsistent);
  CHECK(prof.nomc.max_mean_deviation == 0.0);
  CHECK(prof.nomc.max_variance == 0.0);
  CHECK(prof.nomc.low_power);
}

TEST_CASE("generator validation") {
  const RetrainSetup setup = small_setup(20, 1);
  GeneratorConfig g;
  g.kind = GeneratorKind::RetrainPerturbed;
  g.r = 21;
  try {
    generate_ensemble(g, setup, 3, 1);
    FAIL("expected a configuration error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Configuration);
  }
  GeneratorConfig noise;
  noise.kind = GeneratorKind::OutputNoise;
  noise.noise = -0.1;
  CHECK_THROWS_AS(generate_ensemble(noise, Model::linear_sigmoid({1.0}), 3, 1), Error);
  CHECK(tail_positions(10, 3) == std::vector<std::size_t>{7, 8, 9});
  CHECK_THROWS_AS(parse_generator_kind("nonsense"), Error);
}

TEST_CASE("symmetric output shifts pass the mean-zero test") {
  const Model m = Model::linear_sigmoid({1.0, 0.5});
  ModelChangeEnsemble ens{m, {}, {}, 0, {}, std::nullopt, {}, {}};
  for (int i = 0; i < 10; ++i) {
    ens.members.push_back(Model::output_shift(m, 0.1));
    ens.members.push_back(Model::output_shift(m, -0.1));
  }
  const NomcReport r = check_nomc(ens, grid_points(), 500, 5);
  CHECK(r.mean_zero_pass);
  CHECK(r.max_mean_deviation < 1e-12);
  CHECK(r.points_skipped == 0);
}

TEST_CASE("output-noise ensemble moments") {
  const Model m = Model::linear_sigmoid({1.0, 0.5});
  GeneratorConfig g;
  g.kind = GeneratorKind::OutputNoise;
  g.noise = 0.05;
  const ModelChangeEnsemble ens = generate_ensemble(g, m, 400, 6);
  const NomcReport r = check_nomc(ens, grid_points(), 1000, 7);
  CHECK(r.mean_zero_pass);
  const double expect = 0.05 * 0.05 / 3.0;
  CHECK(r.max_variance == doctest::Approx(expect).epsilon(0.25));
  CHECK(r.max_mean_deviation < 3.0 * 0.05 / std::sqrt(3.0 * 400.0) * 2.0);
}

TEST_CASE("biased parameter ball is rejected") {
  const Model m = Model::linear_sigmoid({1.0, 0.5});
  GeneratorConfig g;
  g.kind = GeneratorKind::ParameterBall;
  g.radius = 0.1;
  g.shift = {0.8, 0.0};
  const ModelChangeEnsemble ens = generate_ensemble(g, m, 50, 8);
  const NomcReport r = check_nomc(ens, grid_points(), 500, 9);
  CHECK_FALSE(r.mean_zero_pass);
  CHECK(r.max_mean_deviation > 0.05);
  const ModelChangeProfile p = estimate_profile(ens, Distribution::gaussian({0.0, 0.0}, 0.1), {5000, 30, 500}, 10);
  CHECK(p.regime == Regime::GomcOnly);
}

TEST_CASE("retraining ensemble") {
  const RetrainSetup setup = small_setup(200, 11);
  GeneratorConfig g;
  g.kind = GeneratorKind::RetrainPerturbed;
  g.r = 2;
  const ModelChangeEnsemble ens = generate_ensemble(g, setup, 50, 12);
  REQUIRE(ens.loss_constants);
  const Distribution mu = Distribution::gaussian({0.0, 0.0}, 0.1);
  const auto xs = mu.sample(20000, 13);
  for (std::size_t j = 0; j < ens.size(); ++j) {
    CHECK(ens.differing[j].size() <= 2);
    for (std::size_t s : ens.differing[j]) CHECK(s >= 198);
    const double bound = theorem3_bound_delta(*ens.loss_constants, ens.step_sizes, ens.differing[j]);
    const Estimate d = l2_model_distance(ens.original, ens.members[j], xs);
    CHECK(d.value <= bound + 3.0 * d.std_error);
    // psi is bounded by the pointwise gap, hence by the same bound
    CHECK(std::abs(psi_statistic(ens.original, ens.members[j], std::span(xs).first(500))) <= bound);
  }
  const ModelChangeProfile p = estimate_profile(ens, mu, {20000, 50, 1000}, 14);
  CHECK(p.regime == Regime::GomcOnly);
  CHECK(p.nu >= 0.0);
  CHECK(p.nu <= 0.5);
  CHECK(p.gamma_m == doctest::Approx(la::norm2(ens.original.weights()) / 4.0));
}

TEST_CASE("subgaussian parameter") {
  CHECK(estimate_subgaussian_nu(std::vector{0.3}) == 0.5);
  CHECK(estimate_subgaussian_nu(std::vector{0.2, 0.2, 0.2}) == 0.0);
  const double nu = estimate_subgaussian_nu(std::vector{0.0, 0.1, 0.2, 0.3});
  CHECK(nu > 0.0);
  CHECK(nu <= 0.5);
}
