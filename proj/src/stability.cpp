#include "cfr/stability.hpp"

#include <cmath>

namespace cfr {

void StabilityConfig::validate() const {
  require(k >= 1, ErrorCode::Configuration, "stability: k must be >= 1");
  require(tau >= 0.0 && tau <= 1.0, ErrorCode::Configuration, "stability: tau must lie in [0,1]");
  if (!sampling) require(std::isfinite(sigma2) && sigma2 > 0.0, ErrorCode::Configuration, "stability: sigma2 must be > 0");
}

Distribution StabilityConfig::neighbourhood(std::span<const double> x) const {
  if (sampling) return sampling->recentered(x);
  return Distribution::gaussian(Vector(x.begin(), x.end()), sigma2);
}

std::vector<FeatureVector> draw_neighbourhood(std::span<const double> x, const StabilityConfig& cfg) {
  cfg.validate();
  return cfg.neighbourhood(x).sample(cfg.k, cfg.seed);
}

double stability_R(const Model& model, double gamma, std::span<const double> x,
                   std::span<const FeatureVector> samples) {
  require(!samples.empty(), ErrorCode::Input, "stability_R: empty sample set");
  require(gamma >= 0.0 && std::isfinite(gamma), ErrorCode::Input, "stability_R: gamma must be >= 0");
  double acc = 0.0;
  for (const auto& xi : samples) acc += model.predict(xi) - gamma * la::dist2(x, xi);
  return acc / double(samples.size());
}

double stability_R(const Model& model, double gamma, std::span<const double> x, const StabilityConfig& cfg) {
  return stability_R(model, gamma, x, draw_neighbourhood(x, cfg));
}

double stability_Rhat(const Model& model, std::span<const double> x, std::span<const FeatureVector> samples) {
  require(!samples.empty(), ErrorCode::Input, "stability_Rhat: empty sample set");
  const double mx = model.predict(x);
  double acc = 0.0;
  for (const auto& xi : samples) {
    const double mi = model.predict(xi);
    acc += mi - std::abs(mx - mi);
  }
  return acc / double(samples.size());
}

double stability_Rhat(const Model& model, std::span<const double> x, const StabilityConfig& cfg) {
  return stability_Rhat(model, x, draw_neighbourhood(x, cfg));
}

RobustnessVerdict robustness_test(const Model& model, std::span<const double> x, const StabilityConfig& cfg) {
  const double rhat = stability_Rhat(model, x, cfg);
  return {rhat >= cfg.tau, rhat};
}

double psi_statistic(const Model& m, const Model& M, std::span<const FeatureVector> samples) {
  require(!samples.empty(), ErrorCode::Input, "psi_statistic: empty sample set");
  double acc = 0.0;
  for (const auto& xi : samples) acc += m.predict(xi) - M.predict(xi);
  return acc / double(samples.size());
}

StabilityReport evaluate_stability(const Model& model, std::span<const double> x, const StabilityConfig& cfg,
                                   std::optional<double> gamma, const Model* changed) {
  StabilityReport r;
  r.x.assign(x.begin(), x.end());
  r.samples = draw_neighbourhood(x, cfg);
  r.rhat = stability_Rhat(model, x, r.samples);
  r.pass = r.rhat >= cfg.tau;
  if (gamma) r.R = stability_R(model, *gamma, x, r.samples);
  if (changed) r.psi = psi_statistic(model, *changed, r.samples);
  return r;
}

}  // namespace cfr
