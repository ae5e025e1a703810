#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfr/modelchange.hpp"
#include "cfr/stability.hpp"
#include "cfr/training.hpp"

namespace cfr {

/// T1: naturally-occurring change with Gaussian neighbourhoods.
/// T2: generally-occurring change with any dominated sampling distribution.
/// T3: retraining on a perturbed dataset (T2 with nu = 0 and the divergence-derived delta).
enum class Theorem { T1, T2, T3 };

const char* to_string(Theorem t) noexcept;
Theorem parse_theorem(const std::string& s);

struct BoundQuery {
  Theorem theorem = Theorem::T2;
  double epsilon = 0.1;
  std::optional<double> ell;  // T2
  std::size_t k = 100;
  std::optional<double> gamma;
  std::optional<double> gamma_m;  // T1
  std::optional<double> sigma2;   // T1
  std::optional<double> delta;    // T2
  std::optional<double> nu;       // T2
  std::optional<double> kappa;    // T2, T3
  // T3
  std::optional<LossConstants> loss;
  Vector step_sizes;
  std::vector<std::size_t> differing;
};

/// exp(-k eps^2 / (8 (gamma + gamma_m)^2 sigma2))
double rhs_theorem1(const BoundQuery& q);
/// 2 exp(-eps^2 k / 2) + exp(-ell^2 / 2); may exceed 1.
double rhs_theorem2(const BoundQuery& q);
/// 2 exp(-eps^2 k / 2)
double rhs_theorem3(const BoundQuery& q);
double rhs(const BoundQuery& q);

/// (2 L^2 / xi) * sum of eta_t over the differing steps: the model-output gap bound.
double theorem3_bound_delta(const LossConstants& c, std::span<const double> step_sizes,
                            std::span<const std::size_t> differing);
/// 2 L * sum of eta_t over the differing steps: the parameter-divergence bound.
double theorem3_parameter_bound(const LossConstants& c, std::span<const double> step_sizes,
                                std::span<const std::size_t> differing);

/// Offset added to the event threshold: 0 (T1), (delta + ell nu) kappa (T2), bound_delta kappa (T3).
double event_offset(const BoundQuery& q);

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

inline constexpr double kZ99 = 2.5758293035489004;

Interval wilson_interval(std::size_t successes, std::size_t trials, double z = kZ99);

struct VerificationReport {
  double frequency = 0.0;
  Interval ci;
  double rhs = 0.0;
  bool violated = false;  // ci.lo > rhs on a non-vacuous bound
  bool vacuous = false;   // rhs >= 1
  bool skipped = false;
  std::string status;     // "ok", "vacuous", "violated", "skipped: ..."
  std::size_t trials = 0;
  std::size_t events = 0;
};

/// Monte Carlo estimate of
///   Pr( (1/k) sum m(X_i) - M(x) >= (gamma/k) sum ||x - X_i|| + eps + offset ).
/// Each trial draws M uniformly from the ensemble and X_1..X_k from cfg's neighbourhood of x,
/// with its stream derived from (seed, trial index).
VerificationReport lhs_event_frequency(const ModelChangeEnsemble& ens, std::span<const double> x,
                                       const StabilityConfig& cfg, const BoundQuery& q, std::size_t trials,
                                       std::uint64_t seed);

/// max over members of |E[psi | M_j] - mean_j E[psi | M_j]|, each expectation by n_mc draws
/// from cfg's neighbourhood of x. Diagnostic for the T1 side condition.
double estimate_epsilon_prime(const ModelChangeEnsemble& ens, std::span<const double> x,
                              const StabilityConfig& cfg, std::size_t n_mc, std::uint64_t seed);

}  // namespace cfr
