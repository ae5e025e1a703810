#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cfr/linalg.hpp"
#include "cfr/models.hpp"

namespace cfr {

enum class Norm { L1, L2 };
enum class CounterfactualMode { Free, Manifold };

const char* to_string(Norm norm) noexcept;
const char* to_string(CounterfactualMode mode) noexcept;
Norm parse_norm(const std::string& s);
CounterfactualMode parse_mode(const std::string& s);

double norm_distance(Norm norm, std::span<const double> a, std::span<const double> b);

struct CounterfactualQuery {
  FeatureVector x;
  Norm norm = Norm::L2;
  CounterfactualMode mode = CounterfactualMode::Free;
  std::vector<FeatureVector> manifold;  // candidate set for manifold mode
  /// Require m(xbar) >= 0.5 + margin_slack.
  double margin_slack = 0.0;
};

struct CounterfactualResult {
  FeatureVector xbar;
  double cost = 0.0;
  bool valid = false;  // m(xbar) >= 0.5
  std::size_t iterations = 0;
  std::size_t candidates_examined = 0;
  std::string method;
};

struct FreeSearchOptions {
  std::size_t max_iterations = 200000;  // total inner descent steps across all routes
  double max_penalty = 1e15;
  /// Coarse-grid seeding for models of at most this dimension with a domain box.
  std::size_t grid_seed_max_dim = 3;
  std::size_t grid_seed_candidates = 4;
};

/// argmin ||x - xbar|| over R^d subject to m(xbar) >= 0.5 + slack.
///
/// Linear-sigmoid with l2 is solved exactly by projecting onto the level set
/// {w.x + b = logit(0.5 + slack)}. Otherwise a quadratic-penalty descent with the
/// penalty weight doubling from 1 runs until the target is met, followed by bisection
/// along [x, xbar]; l1 uses proximal steps (coordinate-wise soft thresholding).
/// Low-dimensional models with a domain box also start routes from the nearest
/// feasible points of a coarse grid. Throws Infeasible when nothing feasible is found
/// and Precondition when m(x) >= 0.5 already.
CounterfactualResult find_counterfactual_free(const Model& model, const CounterfactualQuery& q,
                                              const FreeSearchOptions& opts = {});

/// The closest point of q.manifold with m >= 0.5 + slack; ties go to the lowest index.
CounterfactualResult find_counterfactual_manifold(const Model& model, const CounterfactualQuery& q);

CounterfactualResult find_counterfactual(const Model& model, const CounterfactualQuery& q);

}  // namespace cfr
