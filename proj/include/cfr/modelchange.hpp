#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfr/distributions.hpp"
#include "cfr/models.hpp"
#include "cfr/training.hpp"

namespace cfr {

enum class GeneratorKind { RetrainPerturbed, RetrainBootstrap, ParameterBall, OutputNoise };

const char* to_string(GeneratorKind kind) noexcept;
GeneratorKind parse_generator_kind(const std::string& name);

/// Settings for the four model-change generators. Fields irrelevant to a kind are ignored.
struct GeneratorConfig {
  GeneratorKind kind = GeneratorKind::RetrainPerturbed;

  // retrain-perturbed: r replaced examples, by default at the tail positions n-r .. n-1.
  std::size_t r = 0;
  std::vector<std::size_t> positions;
  // Explicit replacements (size r). When empty, replacements are drawn from the retrain source.
  std::vector<LabeledExample> replacements;

  // parameter-ball: theta_M = theta_m + shift + U(ball of radius < radius).
  double radius = 0.0;
  Vector shift;

  // output-noise: M = clamp(m + u), one u ~ U(-noise, noise) per member.
  double noise = 0.0;
};

/// What the retraining generators need to rebuild m and each M.
struct RetrainSetup {
  BoundedProblem problem;
  std::vector<LabeledExample> data;
  Vector step_sizes;
  Vector theta0;
  std::optional<LabeledDistribution> source;  // replacement / fresh-example source
};

struct ModelChangeEnsemble {
  Model original;
  std::vector<Model> members;
  GeneratorConfig generator;
  std::uint64_t seed = 0;

  // Retraining generators only: per-member 0-based differing steps, and the training constants.
  std::vector<std::vector<std::size_t>> differing;
  std::optional<LossConstants> loss_constants;
  Vector step_sizes;
  std::vector<std::vector<LabeledExample>> member_data;  // each member's training set

  std::size_t size() const noexcept { return members.size(); }
};

/// parameter-ball and output-noise perturb an existing model.
ModelChangeEnsemble generate_ensemble(const GeneratorConfig& config, const Model& base, std::size_t count,
                                      std::uint64_t seed);

/// retrain-perturbed and retrain-bootstrap retrain from the setup; `original` is trained on setup.data.
ModelChangeEnsemble generate_ensemble(const GeneratorConfig& config, const RetrainSetup& setup, std::size_t count,
                                      std::uint64_t seed);

/// The positions a perturbation of size r replaces when none are given: the last r steps.
std::vector<std::size_t> tail_positions(std::size_t n, std::size_t r);

enum class Regime { NomcConsistent, GomcOnly, Neither };

const char* to_string(Regime regime) noexcept;

struct NomcReport {
  double max_mean_deviation = 0.0;  // worst |mean_j M_j(x) - m(x)|
  double max_variance = 0.0;        // worst sample variance of M_j(x)
  bool mean_zero_pass = true;       // no point rejects E[M(x)] = m(x) at 99%
  bool lipschitz_ok = true;         // every member has a known Lipschitz constant
  bool low_power = false;           // fewer than 10 members
  std::size_t points_tested = 0;
  std::size_t points_skipped = 0;   // outputs clamped at 0 or 1
  std::size_t points_rejected = 0;
};

/// Pointwise checks of the naturally-occurring model change conditions at test points.
NomcReport check_nomc(const ModelChangeEnsemble& ens, std::span<const FeatureVector> test_points,
                      std::size_t n_boot, std::uint64_t seed);

struct ModelChangeProfile {
  Estimate delta;               // mean over members of ||m - M||_{L2(mu)}
  Vector distances;             // per member
  Vector distance_errors;       // per-member standard errors
  double nu = 0.0;              // empirical subgaussian parameter of the distances
  double nu_fallback = 0.5;     // bounded range [0,1]
  LipschitzResult gamma;        // over original and members
  double gamma_m = 0.0;
  Regime regime = Regime::Neither;
  NomcReport nomc;
};

struct ProfileOptions {
  std::size_t n_mc = 100000;
  std::size_t test_points = 50;
  std::size_t n_boot = 2000;
};

/// Lambda grid used for the empirical log-MGF.
inline constexpr double kNuLambdaGrid[] = {0.5, 1.0, 2.0, 4.0, 8.0};

/// max over the grid of sqrt(2 phi(lambda) / lambda^2), phi the empirical log-MGF of the
/// centred values, clamped to 1/2. Requires at least two values (else returns 1/2).
double estimate_subgaussian_nu(std::span<const double> values);

ModelChangeProfile estimate_profile(const ModelChangeEnsemble& ens, const Distribution& mu,
                                    const ProfileOptions& opts, std::uint64_t seed);

}  // namespace cfr
