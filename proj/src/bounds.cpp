#include "cfr/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfr/parallel.hpp"
#include "cfr/rng.hpp"

namespace cfr {

const char* to_string(Theorem t) noexcept {
  switch (t) {
    case Theorem::T1: return "T1";
    case Theorem::T2: return "T2";
    case Theorem::T3: return "T3";
  }
  return "?";
}

Theorem parse_theorem(const std::string& s) {
  if (s == "T1") return Theorem::T1;
  if (s == "T2") return Theorem::T2;
  if (s == "T3") return Theorem::T3;
  fail(ErrorCode::Configuration, "unknown theorem '" + s + "' (expected T1, T2 or T3)");
}

namespace {

double need(const std::optional<double>& v, const char* name) {
  if (!v) fail(ErrorCode::Query, std::string("bound query: missing parameter ") + name);
  return *v;
}

void check_common(const BoundQuery& q) {
  require(std::isfinite(q.epsilon) && q.epsilon >= 0.0, ErrorCode::Query, "bound query: epsilon must be >= 0");
  require(q.k >= 1, ErrorCode::Query, "bound query: k must be >= 1");
}

}  // namespace

double rhs_theorem1(const BoundQuery& q) {
  require(q.theorem == Theorem::T1, ErrorCode::Query, "rhs_theorem1: query is not T1");
  check_common(q);
  const double g = need(q.gamma, "gamma") + need(q.gamma_m, "gamma_m");
  const double s2 = need(q.sigma2, "sigma2");
  require(g > 0.0 && s2 > 0.0, ErrorCode::Query, "rhs_theorem1: gamma + gamma_m and sigma2 must be > 0");
  return std::exp(-double(q.k) * q.epsilon * q.epsilon / (8.0 * g * g * s2));
}

double rhs_theorem2(const BoundQuery& q) {
  require(q.theorem == Theorem::T2, ErrorCode::Query, "rhs_theorem2: query is not T2");
  check_common(q);
  const double ell = need(q.ell, "ell");
  require(ell >= 0.0, ErrorCode::Query, "rhs_theorem2: ell must be >= 0");
  return 2.0 * std::exp(-q.epsilon * q.epsilon * double(q.k) / 2.0) + std::exp(-ell * ell / 2.0);
}

double rhs_theorem3(const BoundQuery& q) {
  require(q.theorem == Theorem::T3, ErrorCode::Query, "rhs_theorem3: query is not T3");
  check_common(q);
  return 2.0 * std::exp(-q.epsilon * q.epsilon * double(q.k) / 2.0);
}

double rhs(const BoundQuery& q) {
  switch (q.theorem) {
    case Theorem::T1: return rhs_theorem1(q);
    case Theorem::T2: return rhs_theorem2(q);
    case Theorem::T3: return rhs_theorem3(q);
  }
  fail(ErrorCode::Query, "bound query: unknown theorem");
}

double theorem3_parameter_bound(const LossConstants& c, std::span<const double> step_sizes,
                                std::span<const std::size_t> differing) {
  double sum = 0.0;
  for (std::size_t t : differing) {
    require(t < step_sizes.size(), ErrorCode::Query, "retraining bound: differing step out of range");
    sum += step_sizes[t];
  }
  return 2.0 * c.lipschitz * sum;
}

double theorem3_bound_delta(const LossConstants& c, std::span<const double> step_sizes,
                            std::span<const std::size_t> differing) {
  require(c.admissibility > 0.0, ErrorCode::Query, "retraining bound: admissibility constant must be > 0");
  double sum = 0.0;
  for (std::size_t t : differing) {
    require(t < step_sizes.size(), ErrorCode::Query, "retraining bound: differing step out of range");
    sum += step_sizes[t];
  }
  return 2.0 * c.lipschitz * c.lipschitz / c.admissibility * sum;
}

double event_offset(const BoundQuery& q) {
  switch (q.theorem) {
    case Theorem::T1: return 0.0;
    case Theorem::T2:
      return (need(q.delta, "delta") + need(q.ell, "ell") * need(q.nu, "nu")) * need(q.kappa, "kappa");
    case Theorem::T3:
      require(q.loss.has_value(), ErrorCode::Query, "bound query: T3 needs loss constants");
      return theorem3_bound_delta(*q.loss, q.step_sizes, q.differing) * need(q.kappa, "kappa");
  }
  return 0.0;
}

Interval wilson_interval(std::size_t successes, std::size_t trials, double z) {
  require(trials >= 1, ErrorCode::Input, "wilson_interval: trials must be >= 1");
  const double n = double(trials);
  const double p = double(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

VerificationReport lhs_event_frequency(const ModelChangeEnsemble& ens, std::span<const double> x,
                                       const StabilityConfig& cfg, const BoundQuery& q, std::size_t trials,
                                       std::uint64_t seed) {
  require(!ens.members.empty(), ErrorCode::Input, "lhs_event_frequency: empty ensemble");
  require(trials >= 1, ErrorCode::Input, "lhs_event_frequency: trials must be >= 1");
  la::require_dim(x, ens.original.dim(), "lhs_event_frequency point");
  cfg.validate();

  VerificationReport report;
  report.trials = trials;
  if (q.theorem != Theorem::T1 && !q.kappa) {
    report.skipped = true;
    report.status = "skipped: kappa unavailable";
    return report;
  }
  if (q.theorem == Theorem::T1)
    require(cfg.gaussian(), ErrorCode::Query, "T1 verification needs the Gaussian neighbourhood N(x, sigma2 I)");

  report.rhs = rhs(q);
  const double offset = event_offset(q);
  const double gamma = need(q.gamma, "gamma");
  const Distribution hood = cfg.neighbourhood(x);
  const std::size_t k = q.k;
  const std::size_t count = ens.members.size();

  std::vector<unsigned char> hit(trials, 0);
  parallel::for_each_index(trials, [&](std::size_t t) {
    Rng rng = make_rng(seed, "trial", t);
    const Model& M = ens.members[std::uniform_int_distribution<std::size_t>(0, count - 1)(rng)];
    double sum_m = 0.0, sum_dist = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const FeatureVector xi = hood.draw(rng);
      sum_m += ens.original.predict(xi);
      sum_dist += la::dist2(x, xi);
    }
    const double lhs = sum_m / double(k) - M.predict(x);
    const double threshold = gamma / double(k) * sum_dist + q.epsilon + offset;
    hit[t] = lhs >= threshold ? 1 : 0;
  });
  report.events = std::accumulate(hit.begin(), hit.end(), std::size_t{0});
  report.frequency = double(report.events) / double(trials);
  report.ci = wilson_interval(report.events, trials);
  report.vacuous = report.rhs >= 1.0;
  report.violated = !report.vacuous && report.ci.lo > report.rhs;
  report.status = report.vacuous ? "vacuous" : (report.violated ? "violated" : "ok");
  return report;
}

double estimate_epsilon_prime(const ModelChangeEnsemble& ens, std::span<const double> x,
                              const StabilityConfig& cfg, std::size_t n_mc, std::uint64_t seed) {
  require(!ens.members.empty(), ErrorCode::Input, "estimate_epsilon_prime: empty ensemble");
  const auto samples = cfg.neighbourhood(x).sample(n_mc, seed);
  Vector cond(ens.members.size());
  parallel::for_each_index(ens.members.size(),
                           [&](std::size_t j) { cond[j] = psi_statistic(ens.original, ens.members[j], samples); });
  const double mean = std::accumulate(cond.begin(), cond.end(), 0.0) / double(cond.size());
  double worst = 0.0;
  for (double c : cond) worst = std::max(worst, std::abs(c - mean));
  return worst;
}

}  // namespace cfr
