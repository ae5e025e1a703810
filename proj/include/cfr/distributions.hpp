#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "cfr/linalg.hpp"
#include "cfr/models.hpp"
#include "cfr/rng.hpp"

namespace cfr {

/// Diagonal-covariance Gaussian component.
struct GaussianComponent {
  Vector mean;
  Vector variance;  // per coordinate, > 0
};

enum class DistributionKind { Gaussian, GaussianMixture, UniformBox };

const char* to_string(DistributionKind kind) noexcept;

/// Analytic-density distribution over R^d. Immutable.
class Distribution {
 public:
  static Distribution gaussian(Vector mean, double sigma2);
  static Distribution gaussian_diag(Vector mean, Vector variance);
  static Distribution mixture(Vector weights, std::vector<GaussianComponent> components);
  static Distribution uniform_box(Vector lower, Vector upper);

  DistributionKind kind() const noexcept;
  std::size_t dim() const noexcept { return dim_; }

  /// Mixture weights and components; a Gaussian is a single-component mixture here.
  const Vector& weights() const noexcept { return weights_; }
  const std::vector<GaussianComponent>& components() const noexcept { return components_; }
  /// Uniform-box bounds. Empty for Gaussian kinds.
  const Box& box() const noexcept { return box_; }

  double density(std::span<const double> x) const;
  double log_density(std::span<const double> x) const;

  FeatureVector draw(Rng& rng) const;
  /// n i.i.d. draws; bit-identical for identical seeds.
  std::vector<FeatureVector> sample(std::size_t n, std::uint64_t seed) const;

  /// Same distribution translated so its (first component's) mean or box centre sits at `center`.
  Distribution recentered(std::span<const double> center) const;

  bool full_support() const noexcept { return kind_ != DistributionKind::UniformBox; }

 private:
  Distribution() = default;

  DistributionKind kind_ = DistributionKind::Gaussian;
  std::size_t dim_ = 0;
  Vector weights_;
  std::vector<GaussianComponent> components_;
  Box box_;
};

/// Ground-truth joint distribution: features from `marginal`, P(y = +1 | x) = labeler(x).
struct LabeledDistribution {
  Distribution marginal;
  Model labeler;
};

/// Monte Carlo estimate with its standard error.
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

struct KappaEstimate {
  double value = 0.0;
  double std_error = 0.0;
  /// False when the chi-square integral cannot be shown finite; the raw estimate is then unreliable.
  bool reliable = true;
  std::string warning;
};

/// Whether every point of supp(mu_tilde) lies in supp(mu).
bool absolutely_continuous(const Distribution& mu_tilde, const Distribution& mu);

enum class Integrability { Finite, Infinite, Unknown };

/// Analytic check that the integral of (d mu_tilde / d mu)^2 d mu is finite.
Integrability chi2_integrability(const Distribution& mu_tilde, const Distribution& mu);

/// kappa = || d mu_tilde / d mu ||_{L2(mu)}, estimated as the square root of
/// E_{X ~ mu_tilde}[p_tilde(X) / p(X)]. Throws on an absolute-continuity violation.
KappaEstimate kappa(const Distribution& mu_tilde, const Distribution& mu, std::size_t n_mc,
                    std::uint64_t seed);

/// sqrt(E_mu[(m(X) - M(X))^2]) by Monte Carlo; always within [0,1].
Estimate l2_model_distance(const Model& m, const Model& M, const Distribution& mu, std::size_t n_mc,
                           std::uint64_t seed);

/// Same statistic on a fixed sample set, so several models can share draws.
Estimate l2_model_distance(const Model& m, const Model& M, std::span<const FeatureVector> samples);

}  // namespace cfr
