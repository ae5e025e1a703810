#include "cfr/modelchange.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "cfr/parallel.hpp"
#include "cfr/rng.hpp"

namespace cfr {

const char* to_string(GeneratorKind kind) noexcept {
  switch (kind) {
    case GeneratorKind::RetrainPerturbed: return "retrain-perturbed";
    case GeneratorKind::RetrainBootstrap: return "retrain-bootstrap";
    case GeneratorKind::ParameterBall: return "parameter-ball";
    case GeneratorKind::OutputNoise: return "output-noise";
  }
  return "?";
}

GeneratorKind parse_generator_kind(const std::string& name) {
  for (auto k : {GeneratorKind::RetrainPerturbed, GeneratorKind::RetrainBootstrap, GeneratorKind::ParameterBall,
                 GeneratorKind::OutputNoise})
    if (name == to_string(k)) return k;
  fail(ErrorCode::Configuration, "unknown ensemble generator '" + name + "'");
}

const char* to_string(Regime regime) noexcept {
  switch (regime) {
    case Regime::NomcConsistent: return "NOMC-consistent";
    case Regime::GomcOnly: return "GOMC-only";
    case Regime::Neither: return "neither";
  }
  return "?";
}

std::vector<std::size_t> tail_positions(std::size_t n, std::size_t r) {
  require(r <= n, ErrorCode::Configuration, "perturbation: r must not exceed n");
  std::vector<std::size_t> out(r);
  std::iota(out.begin(), out.end(), n - r);
  return out;
}

ModelChangeEnsemble generate_ensemble(const GeneratorConfig& config, const Model& base, std::size_t count,
                                      std::uint64_t seed) {
  require(count >= 1, ErrorCode::Configuration, "ensemble: count must be >= 1");
  ModelChangeEnsemble ens{base, {}, config, seed, {}, std::nullopt, {}, {}};
  ens.members.resize(count, base);

  switch (config.kind) {
    case GeneratorKind::ParameterBall: {
      require(base.kind() == ModelKind::LinearSigmoid, ErrorCode::Configuration,
              "parameter-ball generator needs a linear-sigmoid base model");
      require(config.radius >= 0.0 && std::isfinite(config.radius), ErrorCode::Configuration,
              "parameter-ball: radius must be >= 0");
      const Vector& theta = base.weights();
      const std::size_t d = theta.size();
      require(config.shift.empty() || config.shift.size() == d, ErrorCode::Configuration,
              "parameter-ball: shift dimension mismatch");
      parallel::for_each_index(count, [&](std::size_t j) {
        Rng rng = make_rng(seed, "member", j);
        Vector w = theta;
        if (!config.shift.empty()) w = la::add(w, config.shift);
        if (config.radius > 0.0) {
          std::normal_distribution<double> gauss;
          Vector dir(d);
          double n = 0.0;
          while (n == 0.0) {
            for (double& v : dir) v = gauss(rng);
            n = la::norm2(dir);
          }
          // u in [0,1) keeps the radius strictly below Delta.
          const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
          la::axpy(config.radius * std::pow(u, 1.0 / double(d)) / n, dir, w);
        }
        ens.members[j] = Model::linear_sigmoid(std::move(w), base.bias());
      });
      break;
    }
    case GeneratorKind::OutputNoise: {
      require(config.noise >= 0.0 && std::isfinite(config.noise), ErrorCode::Configuration,
              "output-noise: amplitude must be >= 0");
      for (std::size_t j = 0; j < count; ++j) {
        Rng rng = make_rng(seed, "member", j);
        const double u =
            config.noise > 0.0 ? std::uniform_real_distribution<double>(-config.noise, config.noise)(rng) : 0.0;
        ens.members[j] = Model::output_shift(base, u);
      }
      break;
    }
    default:
      fail(ErrorCode::Configuration,
           std::string("generator '") + to_string(config.kind) + "' needs a retraining setup");
  }
  return ens;
}

ModelChangeEnsemble generate_ensemble(const GeneratorConfig& config, const RetrainSetup& setup, std::size_t count,
                                      std::uint64_t seed) {
  require(count >= 1, ErrorCode::Configuration, "ensemble: count must be >= 1");
  require(config.kind == GeneratorKind::RetrainPerturbed || config.kind == GeneratorKind::RetrainBootstrap,
          ErrorCode::Configuration,
          std::string("generator '") + to_string(config.kind) + "' does not retrain; pass a base model");
  const std::size_t n = setup.data.size();

  std::vector<std::size_t> positions;
  if (config.kind == GeneratorKind::RetrainPerturbed) {
    require(config.r <= n, ErrorCode::Configuration, "retrain-perturbed: r must not exceed n");
    positions = config.positions.empty() ? tail_positions(n, config.r) : config.positions;
    require(positions.size() == config.r, ErrorCode::Configuration,
            "retrain-perturbed: need exactly r positions");
    std::vector<std::size_t> sorted = positions;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), ErrorCode::Configuration,
            "retrain-perturbed: positions must be distinct");
    require(sorted.empty() || sorted.back() < n, ErrorCode::Configuration,
            "retrain-perturbed: position out of range");
    require(config.replacements.empty() || config.replacements.size() == config.r, ErrorCode::Configuration,
            "retrain-perturbed: need exactly r explicit replacements");
    require(config.r == 0 || !config.replacements.empty() || setup.source.has_value(), ErrorCode::Configuration,
            "retrain-perturbed: no replacement source");
  }

  const TrainingTrace base_trace = gd_train(setup.problem, setup.data, setup.step_sizes, setup.theta0);
  ModelChangeEnsemble ens{base_trace.model(), {}, config, seed, {}, setup.problem.constants(), setup.step_sizes, {}};
  ens.members.resize(count, ens.original);
  ens.differing.resize(count);
  ens.member_data.resize(count);

  parallel::for_each_index(count, [&](std::size_t j) {
    Rng rng = make_rng(seed, "member", j);
    std::vector<LabeledExample> data = setup.data;
    if (config.kind == GeneratorKind::RetrainPerturbed) {
      for (std::size_t i = 0; i < positions.size(); ++i)
        data[positions[i]] = config.replacements.empty() ? draw_example(*setup.source, setup.problem.bound, rng)
                                                         : config.replacements[i];
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t i = 0; i < n; ++i) data[i] = setup.data[pick(rng)];
    }
    for (std::size_t t = 0; t < n; ++t)
      if (!(data[t] == setup.data[t])) ens.differing[j].push_back(t);
    ens.members[j] = gd_train(setup.problem, data, setup.step_sizes, setup.theta0).model();
    ens.member_data[j] = std::move(data);
  });
  return ens;
}

NomcReport check_nomc(const ModelChangeEnsemble& ens, std::span<const FeatureVector> test_points,
                      std::size_t n_boot, std::uint64_t seed) {
  require(!ens.members.empty(), ErrorCode::Input, "check_nomc: empty ensemble");
  require(n_boot >= 100, ErrorCode::Input, "check_nomc: need at least 100 bootstrap resamples");
  NomcReport report;
  const std::size_t count = ens.members.size();
  report.low_power = count < 10;

  for (const Model& M : ens.members) {
    try {
      (void)lipschitz_constant(M);
    } catch (const Error&) {
      report.lipschitz_ok = false;
    }
  }

  // Family-wise 99%: Bonferroni over the test points, two-sided.
  const double alpha = 0.01 / double(std::max<std::size_t>(1, test_points.size()));
  const double z = boost::math::quantile(boost::math::normal(), 1.0 - alpha / 2.0);

  Vector diff(count), boot(n_boot);
  for (std::size_t p = 0; p < test_points.size(); ++p) {
    const auto& x = test_points[p];
    const double base = ens.original.predict(x);
    bool clamped = base <= 0.0 || base >= 1.0;
    for (std::size_t j = 0; j < count; ++j) {
      const double v = ens.members[j].predict(x);
      clamped = clamped || v <= 0.0 || v >= 1.0;
      diff[j] = v - base;
    }
    if (clamped) {
      ++report.points_skipped;
      continue;
    }
    ++report.points_tested;

    const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / double(count);
    double ss = 0.0;
    for (double d : diff) ss += (d - mean) * (d - mean);
    const double var = count > 1 ? ss / double(count - 1) : 0.0;
    report.max_mean_deviation = std::max(report.max_mean_deviation, std::abs(mean));
    report.max_variance = std::max(report.max_variance, var);

    // Bootstrap standard error of the mean over members.
    Rng rng = make_rng(seed, "nomc-bootstrap", p);
    std::uniform_int_distribution<std::size_t> pick(0, count - 1);
    for (std::size_t b = 0; b < n_boot; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < count; ++j) s += diff[pick(rng)];
      boot[b] = s / double(count);
    }
    const double bmean = std::accumulate(boot.begin(), boot.end(), 0.0) / double(n_boot);
    double bss = 0.0;
    for (double v : boot) bss += (v - bmean) * (v - bmean);
    const double se = std::sqrt(bss / double(n_boot - 1));

    if (std::abs(mean) > z * se + 1e-12) {
      ++report.points_rejected;
      report.mean_zero_pass = false;
    }
  }
  return report;
}

double estimate_subgaussian_nu(std::span<const double> values) {
  constexpr double fallback = 0.5;
  if (values.size() < 2) return fallback;
  const double n = double(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double nu = 0.0;
  for (double lambda : kNuLambdaGrid) {
    double top = -std::numeric_limits<double>::infinity();
    for (double v : values) top = std::max(top, lambda * (v - mean));
    double s = 0.0;
    for (double v : values) s += std::exp(lambda * (v - mean) - top);
    const double phi = top + std::log(s / n);
    nu = std::max(nu, std::sqrt(std::max(0.0, 2.0 * phi / (lambda * lambda))));
  }
  return std::min(nu, fallback);
}

ModelChangeProfile estimate_profile(const ModelChangeEnsemble& ens, const Distribution& mu,
                                    const ProfileOptions& opts, std::uint64_t seed) {
  require(!ens.members.empty(), ErrorCode::Input, "estimate_profile: empty ensemble");
  require(mu.dim() == ens.original.dim(), ErrorCode::Input, "estimate_profile: dimension mismatch");

  ModelChangeProfile prof;
  const std::size_t count = ens.members.size();
  const auto samples = mu.sample(opts.n_mc, seeding::derive(seed, "l2-samples"));
  prof.distances.resize(count);
  prof.distance_errors.resize(count);
  parallel::for_each_index(count, [&](std::size_t j) {
    const Estimate e = l2_model_distance(ens.original, ens.members[j], samples);
    prof.distances[j] = e.value;
    prof.distance_errors[j] = e.std_error;
  });

  const double n = double(count);
  const double mean = std::accumulate(prof.distances.begin(), prof.distances.end(), 0.0) / n;
  double between = 0.0, within = 0.0;
  for (std::size_t j = 0; j < count; ++j) {
    between += (prof.distances[j] - mean) * (prof.distances[j] - mean);
    within += prof.distance_errors[j] * prof.distance_errors[j];
  }
  const double var_between = count > 1 ? between / (n - 1.0) : 0.0;
  prof.delta = {mean, std::sqrt(var_between / n + within / (n * n))};
  prof.nu = estimate_subgaussian_nu(prof.distances);

  const auto test_points = mu.sample(std::max<std::size_t>(1, opts.test_points), seeding::derive(seed, "test-points"));
  prof.nomc = check_nomc(ens, test_points, opts.n_boot, seeding::derive(seed, "nomc"));

  if (prof.nomc.lipschitz_ok) {
    std::vector<Model> all;
    all.reserve(count + 1);
    all.push_back(ens.original);
    all.insert(all.end(), ens.members.begin(), ens.members.end());
    prof.gamma = ensemble_lipschitz(all);
    prof.gamma_m = lipschitz_constant(ens.original).value;
    prof.regime = prof.nomc.mean_zero_pass ? Regime::NomcConsistent : Regime::GomcOnly;
  } else {
    prof.regime = Regime::Neither;
  }
  return prof;
}

}  // namespace cfr
