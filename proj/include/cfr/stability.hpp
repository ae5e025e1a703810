#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cfr/distributions.hpp"
#include "cfr/models.hpp"

namespace cfr {

struct StabilityConfig {
  std::size_t k = 100;
  /// Variance of the default N(x, sigma2 I) neighbourhood.
  double sigma2 = 0.01;
  /// Any other analytic sampling distribution, recentred at x before sampling.
  std::optional<Distribution> sampling;
  double tau = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  Distribution neighbourhood(std::span<const double> x) const;
  bool gaussian() const noexcept { return !sampling.has_value(); }
};

/// The k-point neighbourhood N_{x,k}; identical for identical (x, cfg).
std::vector<FeatureVector> draw_neighbourhood(std::span<const double> x, const StabilityConfig& cfg);

/// (1/k) sum (m(x_i) - gamma ||x - x_i||).
double stability_R(const Model& model, double gamma, std::span<const double> x,
                   std::span<const FeatureVector> samples);
double stability_R(const Model& model, double gamma, std::span<const double> x, const StabilityConfig& cfg);

/// (1/k) sum (m(x_i) - |m(x) - m(x_i)|).
double stability_Rhat(const Model& model, std::span<const double> x, std::span<const FeatureVector> samples);
double stability_Rhat(const Model& model, std::span<const double> x, const StabilityConfig& cfg);

struct RobustnessVerdict {
  bool pass = false;
  double rhat = 0.0;
};

/// Accept iff Rhat >= tau.
RobustnessVerdict robustness_test(const Model& model, std::span<const double> x, const StabilityConfig& cfg);

/// (1/k) sum (m(x_i) - M(x_i)).
double psi_statistic(const Model& m, const Model& M, std::span<const FeatureVector> samples);

struct StabilityReport {
  FeatureVector x;
  std::vector<FeatureVector> samples;
  std::optional<double> R;  // only when gamma is supplied
  double rhat = 0.0;
  bool pass = false;
  std::optional<double> psi;
};

StabilityReport evaluate_stability(const Model& model, std::span<const double> x, const StabilityConfig& cfg,
                                   std::optional<double> gamma = std::nullopt,
                                   const Model* changed = nullptr);

}  // namespace cfr
