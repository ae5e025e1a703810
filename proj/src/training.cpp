#include "cfr/training.hpp"

#include <algorithm>
#include <cmath>

#include "cfr/rng.hpp"

namespace cfr {

namespace {

// Relative slack on ||x|| <= B so that points scaled onto the sphere pass.
constexpr double kBoundSlack = 1e-12;

// ln(1 + e^{-t}) without overflow.
double softplus_neg(double t) {
  if (t > 0.0) return std::log1p(std::exp(-t));
  return -t + std::log1p(std::exp(t));
}

Vector random_direction(std::size_t d, Rng& rng) {
  std::normal_distribution<double> gauss;
  Vector v(d);
  double n = 0.0;
  while (n == 0.0) {
    for (double& x : v) x = gauss(rng);
    n = la::norm2(v);
  }
  for (double& x : v) x /= n;
  return v;
}

// Uniform in the ball of the given radius; with probability 1/4 on its surface,
// where curvature and gradient norms peak.
Vector ball_point(std::size_t d, double radius, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector v = random_direction(d, rng);
  const double r = unif(rng) < 0.25 ? radius : radius * std::pow(unif(rng), 1.0 / double(d));
  for (double& x : v) x *= r;
  return la::project_ball(std::move(v), radius);
}

LabeledExample random_example(const BoundedProblem& p, Rng& rng) {
  LabeledExample z;
  z.x = ball_point(p.dim, p.bound, rng);
  z.y = std::bernoulli_distribution(0.5)(rng) ? 1 : -1;
  return z;
}

}  // namespace

LogisticLoss::LogisticLoss(double bound) : bound_(bound) {
  require(std::isfinite(bound) && bound > 0.0, ErrorCode::ProblemSpec, "logistic loss: B must be > 0");
}

double LogisticLoss::value(std::span<const double> theta, const LabeledExample& z) const {
  return softplus_neg(double(z.y) * la::dot(z.x, theta));
}

Vector LogisticLoss::gradient(std::span<const double> theta, const LabeledExample& z) const {
  const double y = double(z.y);
  const double s = sigmoid(-y * la::dot(z.x, theta));
  return la::scaled(z.x, -y * s);
}

LossConstants LogisticLoss::constants() const {
  const double b = bound_;
  return {b / (std::exp(-b) + 1.0), b * b / 4.0, 1.0 / (std::exp(b) + 1.0)};
}

BoundedProblem BoundedProblem::logistic(double bound, std::size_t dim) {
  require(dim >= 1, ErrorCode::ProblemSpec, "bounded problem: dim must be >= 1");
  return BoundedProblem{bound, dim, std::make_shared<LogisticLoss>(bound)};
}

void BoundedProblem::validate(const LabeledExample& z) const {
  require(z.x.size() == dim, ErrorCode::ProblemSpec, "example dimension does not match the problem");
  require(z.y == 1 || z.y == -1, ErrorCode::ProblemSpec, "labels must be -1 or +1");
  require(la::all_finite(z.x), ErrorCode::ProblemSpec, "example has non-finite coordinates");
  require(la::norm2(z.x) <= bound * (1.0 + kBoundSlack), ErrorCode::ProblemSpec,
          "example violates the instance-norm bound ||x|| <= B");
}

double BoundedProblem::value(std::span<const double> theta, const LabeledExample& z) const {
  validate(z);
  la::require_dim(theta, dim, "loss value");
  return loss->value(theta, z);
}

Vector BoundedProblem::gradient(std::span<const double> theta, const LabeledExample& z) const {
  validate(z);
  la::require_dim(theta, dim, "loss gradient");
  return loss->gradient(theta, z);
}

Vector BoundedProblem::step(std::span<const double> theta, double eta, const LabeledExample& z) const {
  Vector next(theta.begin(), theta.end());
  la::axpy(-eta, loss->gradient(theta, z), next);
  return la::project_ball(std::move(next), kThetaBound);
}

double BoundedProblem::max_step_size() const { return 2.0 / constants().smoothness; }

Vector constant_steps(std::size_t n, double eta) { return Vector(n, eta); }

TrainingTrace gd_train(const BoundedProblem& problem, std::span<const LabeledExample> data,
                       std::span<const double> step_sizes, Vector theta0, const TrainOptions& opts) {
  require(step_sizes.size() == data.size(), ErrorCode::Configuration,
          "gd_train: need exactly one step size per example");
  require(opts.epochs >= 1, ErrorCode::Configuration, "gd_train: epochs must be >= 1");
  la::require_dim(theta0, problem.dim, "gd_train theta0");
  require(la::norm2(theta0) <= BoundedProblem::kThetaBound * (1.0 + kBoundSlack), ErrorCode::Configuration,
          "gd_train: ||theta0|| must be <= 1");
  const double ceiling = problem.max_step_size();
  for (double eta : step_sizes) {
    require(std::isfinite(eta) && eta >= 0.0, ErrorCode::Configuration, "gd_train: step sizes must be >= 0");
    if (!opts.unsafe && eta > ceiling)
      fail(ErrorCode::Configuration, "gd_train: step size " + std::to_string(eta) + " exceeds 2/alpha = " +
                                         std::to_string(ceiling) + " (set unsafe to override)");
  }
  for (const auto& z : data) problem.validate(z);

  TrainingTrace trace;
  const std::size_t steps = data.size() * opts.epochs;
  trace.thetas.reserve(steps + 1);
  trace.step_sizes.reserve(steps);
  trace.example_indices.reserve(steps);
  trace.thetas.push_back(std::move(theta0));
  for (std::size_t e = 0; e < opts.epochs; ++e) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      trace.thetas.push_back(problem.step(trace.thetas.back(), step_sizes[i], data[i]));
      trace.step_sizes.push_back(step_sizes[i]);
      trace.example_indices.push_back(i);
    }
  }
  return trace;
}

ExpansiveReport check_expansive(const BoundedProblem& problem, double eta, std::size_t n_pairs,
                                std::uint64_t seed) {
  Rng rng = make_rng(seed, "expansive");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  ExpansiveReport report;
  while (report.pairs < n_pairs) {
    const LabeledExample z = random_example(problem, rng);
    const Vector a = ball_point(problem.dim, 1.0, rng);
    Vector b;
    if (unif(rng) < 0.5) {
      b = ball_point(problem.dim, 1.0, rng);
    } else {
      // Near pair, scale log-uniform in [1e-6, 1e-1].
      const double scale = std::pow(10.0, -6.0 + 5.0 * unif(rng));
      b = la::project_ball(la::add(a, la::scaled(random_direction(problem.dim, rng), scale)), 1.0);
    }
    const double dist = la::dist2(a, b);
    if (dist < 1e-8) continue;
    const double ratio = la::dist2(problem.step(a, eta, z), problem.step(b, eta, z)) / dist;
    report.max_ratio = std::max(report.max_ratio, ratio);
    ++report.pairs;
  }
  return report;
}

BoundedReport check_bounded(const BoundedProblem& problem, double eta, std::size_t n_samples,
                            std::uint64_t seed) {
  Rng rng = make_rng(seed, "bounded");
  BoundedReport report;
  report.bound = eta * problem.constants().lipschitz;
  for (; report.samples < n_samples; ++report.samples) {
    const LabeledExample z = random_example(problem, rng);
    const Vector theta = ball_point(problem.dim, 1.0, rng);
    report.max_step = std::max(report.max_step, la::dist2(theta, problem.step(theta, eta, z)));
  }
  return report;
}

JointTrace joint_divergence_trace(const BoundedProblem& problem, std::span<const LabeledExample> s1,
                                  std::span<const LabeledExample> s2, std::span<const double> step_sizes,
                                  const Vector& theta0, std::optional<std::vector<std::size_t>> declared_positions) {
  require(s1.size() == s2.size(), ErrorCode::PerturbationSpec,
          "joint trace: datasets must have equal length");
  const std::size_t n = s1.size();

  JointTrace out;
  for (std::size_t t = 0; t < n; ++t)
    if (!(s1[t] == s2[t])) out.differing.push_back(t);

  if (declared_positions) {
    std::vector<std::size_t> declared = *declared_positions;
    std::sort(declared.begin(), declared.end());
    for (std::size_t t : declared)
      require(t < n, ErrorCode::PerturbationSpec, "joint trace: declared position out of range");
    for (std::size_t t : out.differing)
      require(std::binary_search(declared.begin(), declared.end(), t), ErrorCode::PerturbationSpec,
              "joint trace: datasets differ at step " + std::to_string(t) + " outside the declared positions");
  }

  out.first = gd_train(problem, s1, step_sizes, theta0);
  out.second = gd_train(problem, s2, step_sizes, theta0);

  const double L = problem.constants().lipschitz;
  constexpr double slack = 1e-12;
  out.deltas.resize(n + 1);
  out.bound_prefix.resize(n + 1);
  out.deltas[0] = la::dist2(out.first.thetas[0], out.second.thetas[0]);
  out.bound_prefix[0] = 0.0;
  std::size_t next_diff = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const bool differs = next_diff < out.differing.size() && out.differing[next_diff] == t;
    if (differs) ++next_diff;
    const double allowance = differs ? 2.0 * step_sizes[t] * L : 0.0;
    out.deltas[t + 1] = la::dist2(out.first.thetas[t + 1], out.second.thetas[t + 1]);
    out.bound_prefix[t + 1] = out.bound_prefix[t] + allowance;
    if (out.deltas[t + 1] > out.deltas[t] + allowance + slack && out.recursion_holds) {
      out.recursion_holds = false;
      out.first_violation = t;
    }
  }
  out.bound = out.bound_prefix[n];
  return out;
}

LabeledExample draw_example(const LabeledDistribution& source, double bound, Rng& rng) {
  for (int attempt = 0; attempt < 100000; ++attempt) {
    FeatureVector x = source.marginal.draw(rng);
    if (la::norm2(x) > bound) continue;
    const double p = source.labeler.predict(x);
    const int y = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p ? 1 : -1;
    return {std::move(x), y};
  }
  fail(ErrorCode::Configuration, "synthesize: marginal puts almost no mass inside ||x|| <= B");
}

std::vector<LabeledExample> synthesize_dataset(const LabeledDistribution& source, std::size_t n, double bound,
                                               std::uint64_t seed) {
  require(source.labeler.dim() == source.marginal.dim(), ErrorCode::Configuration,
          "synthesize: labeler and marginal dimensions differ");
  Rng rng = make_rng(seed);
  std::vector<LabeledExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw_example(source, bound, rng));
  return out;
}

}  // namespace cfr
