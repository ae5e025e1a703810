#include "cfr/counterfactual.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

namespace cfr {

const char* to_string(Norm norm) noexcept { return norm == Norm::L1 ? "l1" : "l2"; }

const char* to_string(CounterfactualMode mode) noexcept {
  return mode == CounterfactualMode::Free ? "free" : "manifold";
}

Norm parse_norm(const std::string& s) {
  if (s == "l1") return Norm::L1;
  if (s == "l2") return Norm::L2;
  fail(ErrorCode::Configuration, "unknown norm '" + s + "' (expected l1 or l2)");
}

CounterfactualMode parse_mode(const std::string& s) {
  if (s == "free") return CounterfactualMode::Free;
  if (s == "manifold") return CounterfactualMode::Manifold;
  fail(ErrorCode::Configuration, "unknown counterfactual mode '" + s + "' (expected free or manifold)");
}

double norm_distance(Norm norm, std::span<const double> a, std::span<const double> b) {
  return norm == Norm::L1 ? la::dist1(a, b) : la::dist2(a, b);
}

namespace {

double target_of(const CounterfactualQuery& q) {
  require(std::isfinite(q.margin_slack) && q.margin_slack >= 0.0 && q.margin_slack < 0.5, ErrorCode::Input,
          "counterfactual: margin slack must lie in [0, 0.5)");
  return kDecisionThreshold + q.margin_slack;
}

void check_query(const Model& model, const CounterfactualQuery& q) {
  la::require_dim(q.x, model.dim(), "counterfactual query");
  require(la::all_finite(q.x), ErrorCode::Input, "counterfactual: query has non-finite coordinates");
  if (model.predict(q.x) >= kDecisionThreshold)
    fail(ErrorCode::Precondition, "counterfactual: query already satisfies m(x) >= 0.5");
}

CounterfactualResult finish(const Model& model, const CounterfactualQuery& q, FeatureVector xbar, std::string method) {
  CounterfactualResult r;
  r.cost = norm_distance(q.norm, q.x, xbar);
  r.valid = model.predict(xbar) >= kDecisionThreshold;
  r.xbar = std::move(xbar);
  r.method = std::move(method);
  return r;
}

// Smallest fraction along [x, feasible] that still meets the target; keeps the feasible end.
FeatureVector bisect_segment(const Model& model, std::span<const double> x, std::span<const double> feasible,
                             double target) {
  const Vector dir = la::sub(feasible, x);
  auto at = [&](double beta) {
    FeatureVector p(x.begin(), x.end());
    la::axpy(beta, dir, p);
    return p;
  };
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (model.predict(at(mid)) >= target)
      hi = mid;
    else
      lo = mid;
  }
  FeatureVector p = at(hi);
  if (model.predict(p) < target) return FeatureVector(feasible.begin(), feasible.end());
  return p;
}

class PenaltySearch {
 public:
  PenaltySearch(const Model& model, const CounterfactualQuery& q, double target, const FreeSearchOptions& opts,
                std::size_t& iterations)
      : model_(model), q_(q), target_(target), opts_(opts), iterations_(iterations) {
    // Aim slightly past the target so the penalty minimizer lands on the feasible side.
    inner_target_ = target + 1e-4 * (1.0 - target);
  }

  /// Continuation over the penalty weight, warm-started at `start`.
  std::optional<FeatureVector> run(FeatureVector z, double lambda0) {
    for (double lambda = lambda0; lambda <= opts_.max_penalty; lambda *= 2.0) {
      z = minimize(std::move(z), lambda);
      if (model_.predict(z) >= target_) return z;
      if (iterations_ >= opts_.max_iterations) break;
    }
    return std::nullopt;
  }

 private:
  double gap(std::span<const double> z) const { return std::max(0.0, inner_target_ - model_.predict(z)); }

  double cost(std::span<const double> z) const {
    return q_.norm == Norm::L1 ? la::dist1(z, q_.x) : std::pow(la::dist2(z, q_.x), 2);
  }

  FeatureVector minimize(FeatureVector z, double lambda) {
    double step = 1.0 / (1.0 + lambda);
    for (std::size_t inner = 0; inner < 5000 && iterations_ < opts_.max_iterations; ++inner, ++iterations_) {
      const double h = gap(z);
      // Gradient of the smooth penalty lambda * h^2.
      Vector gpen(z.size(), 0.0);
      if (h > 0.0) gpen = la::scaled(model_.gradient(z), -2.0 * lambda * h);
      const double pen = lambda * h * h;

      FeatureVector next;
      bool accepted = false;
      step = std::min(step * 2.0, 1.0);
      if (q_.norm == Norm::L2) {
        Vector g = la::add(la::scaled(la::sub(z, q_.x), 2.0), gpen);
        const double gg = la::dot(g, g);
        if (gg < 1e-30) break;
        const double f0 = cost(z) + pen;
        for (; step > 1e-18; step *= 0.5) {
          next = z;
          la::axpy(-step, g, next);
          const double hn = gap(next);
          if (cost(next) + lambda * hn * hn <= f0 - 1e-4 * step * gg) {
            accepted = true;
            break;
          }
        }
      } else {
        // Proximal step: soft-threshold the displacement from x.
        const double f0 = pen;
        for (; step > 1e-18; step *= 0.5) {
          next = z;
          la::axpy(-step, gpen, next);
          for (std::size_t i = 0; i < next.size(); ++i) {
            const double d = next[i] - q_.x[i];
            next[i] = q_.x[i] + std::copysign(std::max(0.0, std::abs(d) - step), d);
          }
          const Vector move = la::sub(next, z);
          const double hn = gap(next);
          if (lambda * hn * hn <= f0 + la::dot(gpen, move) + la::dot(move, move) / (2.0 * step) + 1e-15) {
            accepted = true;
            break;
          }
        }
      }
      if (!accepted) break;
      const double moved = la::dist2(next, z);
      z = std::move(next);
      if (moved <= 1e-13 * (1.0 + la::norm2(z))) break;
    }
    return z;
  }

  const Model& model_;
  const CounterfactualQuery& q_;
  double target_;
  double inner_target_;
  const FreeSearchOptions& opts_;
  std::size_t& iterations_;
};

std::size_t seed_grid_points(std::size_t d) {
  switch (d) {
    case 1: return 2049;
    case 2: return 129;
    default: return 25;
  }
}

// Grid points over the model's domain that meet the target, nearest first.
std::vector<FeatureVector> feasible_grid_seeds(const Model& model, const CounterfactualQuery& q, double target,
                                               const FreeSearchOptions& opts, std::size_t& examined) {
  const auto box = model.domain();
  const std::size_t d = model.dim();
  if (!box || d > opts.grid_seed_max_dim) return {};
  const std::size_t g = seed_grid_points(d);
  std::size_t total = 1;
  for (std::size_t i = 0; i < d; ++i) total *= g;

  std::vector<std::pair<double, FeatureVector>> hits;
  FeatureVector p(d);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rest = flat;
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t k = rest % g;
      rest /= g;
      p[i] = box->lower[i] + (box->upper[i] - box->lower[i]) * double(k) / double(g - 1);
    }
    ++examined;
    if (model.predict(p) >= target) hits.emplace_back(norm_distance(q.norm, q.x, p), p);
  }
  const std::size_t keep = std::min(opts.grid_seed_candidates, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + std::ptrdiff_t(keep), hits.end(),
                    [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<FeatureVector> out;
  for (std::size_t i = 0; i < keep; ++i) out.push_back(std::move(hits[i].second));
  return out;
}

}  // namespace

CounterfactualResult find_counterfactual_free(const Model& model, const CounterfactualQuery& q,
                                              const FreeSearchOptions& opts) {
  check_query(model, q);
  const double target = target_of(q);

  if (model.kind() == ModelKind::LinearSigmoid && q.norm == Norm::L2) {
    const Vector& w = model.weights();
    const double ww = la::dot(w, w);
    if (ww == 0.0) fail(ErrorCode::Infeasible, "counterfactual: constant model never reaches the target");
    const double shift = (logit(target) - model.margin(q.x)) / ww;
    FeatureVector xbar = q.x;
    la::axpy(shift, w, xbar);
    const double wn = std::sqrt(ww);
    for (double nudge = 1e-12; model.predict(xbar) < target && nudge < 1e-6; nudge *= 2.0)
      la::axpy(nudge / wn, w, xbar);
    if (model.predict(xbar) < target) fail(ErrorCode::Infeasible, "counterfactual: projection failed to reach target");
    return finish(model, q, std::move(xbar), "closed-form");
  }

  std::size_t iterations = 0, examined = 0;
  PenaltySearch search(model, q, target, opts, iterations);
  std::optional<FeatureVector> best;
  double best_cost = std::numeric_limits<double>::infinity();
  std::string best_method;
  auto consider = [&](std::optional<FeatureVector> z, const char* method) {
    if (!z) return;
    FeatureVector tight = bisect_segment(model, q.x, *z, target);
    const double c = norm_distance(q.norm, q.x, tight);
    if (c < best_cost) {
      best_cost = c;
      best = std::move(tight);
      best_method = method;
    }
  };

  consider(search.run(q.x, 1.0), "penalty");
  for (const FeatureVector& seed : feasible_grid_seeds(model, q, target, opts, examined)) {
    const FeatureVector boundary = bisect_segment(model, q.x, seed, target);
    consider(boundary, "grid-seeded");
    consider(search.run(boundary, 1e4), "grid-seeded-penalty");
  }

  if (!best) fail(ErrorCode::Infeasible, "counterfactual: no point reaching the target found within budget");
  CounterfactualResult r = finish(model, q, std::move(*best), best_method);
  r.iterations = iterations;
  r.candidates_examined = examined;
  return r;
}

CounterfactualResult find_counterfactual_manifold(const Model& model, const CounterfactualQuery& q) {
  check_query(model, q);
  const double target = target_of(q);
  require(!q.manifold.empty(), ErrorCode::Input, "counterfactual: manifold mode needs a non-empty candidate set");

  std::optional<std::size_t> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < q.manifold.size(); ++i) {
    la::require_dim(q.manifold[i], model.dim(), "manifold candidate");
    if (model.predict(q.manifold[i]) < target) continue;
    const double c = norm_distance(q.norm, q.x, q.manifold[i]);
    if (c < best_cost) {
      best_cost = c;
      best = i;
    }
  }
  if (!best) fail(ErrorCode::Infeasible, "counterfactual: no manifold candidate reaches the target");
  CounterfactualResult r = finish(model, q, q.manifold[*best], "manifold-scan");
  r.candidates_examined = q.manifold.size();
  return r;
}

CounterfactualResult find_counterfactual(const Model& model, const CounterfactualQuery& q) {
  return q.mode == CounterfactualMode::Free ? find_counterfactual_free(model, q)
                                            : find_counterfactual_manifold(model, q);
}

}  // namespace cfr
