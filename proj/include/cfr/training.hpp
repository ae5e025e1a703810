#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfr/distributions.hpp"
#include "cfr/linalg.hpp"
#include "cfr/models.hpp"

namespace cfr {

struct LabeledExample {
  FeatureVector x;
  int y = 1;  // -1 or +1

  bool operator==(const LabeledExample&) const = default;
};

/// Constants of a loss f(., z) over the bounded problem:
/// |f(a,z) - f(b,z)| <= lipschitz ||a - b||, grad f is `smoothness`-Lipschitz,
/// and |f(a,z) - f(b,z)| >= admissibility |x.a - x.b|.
struct LossConstants {
  double lipschitz = 0.0;      // L
  double smoothness = 0.0;     // alpha
  double admissibility = 0.0;  // xi
};

class LossFunction {
 public:
  virtual ~LossFunction() = default;
  virtual std::string name() const = 0;
  virtual double value(std::span<const double> theta, const LabeledExample& z) const = 0;
  virtual Vector gradient(std::span<const double> theta, const LabeledExample& z) const = 0;
  virtual LossConstants constants() const = 0;
};

/// ln(1 + exp(-y x.theta)) over ||x|| <= B, ||theta|| <= 1.
/// L = B / (e^-B + 1), alpha = B^2 / 4, xi = 1 / (e^B + 1).
class LogisticLoss final : public LossFunction {
 public:
  explicit LogisticLoss(double bound);

  std::string name() const override { return "logistic"; }
  double value(std::span<const double> theta, const LabeledExample& z) const override;
  Vector gradient(std::span<const double> theta, const LabeledExample& z) const override;
  LossConstants constants() const override;

  double bound() const noexcept { return bound_; }

 private:
  double bound_;
};

/// Instances in {x in R^dim : ||x|| <= B}, iterates kept in the unit ball.
struct BoundedProblem {
  double bound = 1.0;  // B
  std::size_t dim = 2;
  std::shared_ptr<const LossFunction> loss;

  static BoundedProblem logistic(double bound, std::size_t dim);

  static constexpr double kThetaBound = 1.0;

  /// Throws ProblemSpec when ||x|| > B, the dimension is wrong, or y is not +-1.
  void validate(const LabeledExample& z) const;
  double value(std::span<const double> theta, const LabeledExample& z) const;
  Vector gradient(std::span<const double> theta, const LabeledExample& z) const;
  /// One projected gradient step G(theta) = P(theta - eta grad f(theta; z)).
  Vector step(std::span<const double> theta, double eta, const LabeledExample& z) const;
  LossConstants constants() const { return loss->constants(); }
  /// The step-size ceiling 2 / alpha.
  double max_step_size() const;
};

struct TrainingTrace {
  std::vector<Vector> thetas;  // theta_1 .. theta_{n+1}
  Vector step_sizes;           // eta_1 .. eta_n
  std::vector<std::size_t> example_indices;

  const Vector& final_theta() const { return thetas.back(); }
  Model model() const { return Model::linear_sigmoid(thetas.back()); }
};

struct TrainOptions {
  /// Allows eta_t > 2/alpha, for ablations only.
  bool unsafe = false;
  /// Passes over the data; bound verification always uses exactly one.
  std::size_t epochs = 1;
};

/// Sequential projected GD: step t uses example t (dataset order), eta_t = step_sizes[t].
TrainingTrace gd_train(const BoundedProblem& problem, std::span<const LabeledExample> data,
                       std::span<const double> step_sizes, Vector theta0, const TrainOptions& opts = {});

/// Constant step schedule of the given length.
Vector constant_steps(std::size_t n, double eta);

struct ExpansiveReport {
  double max_ratio = 0.0;
  std::size_t pairs = 0;
};

/// Max over sampled (theta1, theta2, z) of ||G(theta1) - G(theta2)|| / ||theta1 - theta2||,
/// with both parameters in the unit ball and ||x|| <= B.
ExpansiveReport check_expansive(const BoundedProblem& problem, double eta, std::size_t n_pairs,
                                std::uint64_t seed);

struct BoundedReport {
  double max_step = 0.0;
  double bound = 0.0;  // eta * L
  std::size_t samples = 0;
};

/// Max over sampled (theta, z) of ||theta - G(theta)||.
BoundedReport check_bounded(const BoundedProblem& problem, double eta, std::size_t n_samples,
                            std::uint64_t seed);

struct JointTrace {
  TrainingTrace first;
  TrainingTrace second;
  Vector deltas;                          // delta_1 .. delta_{n+1}
  std::vector<std::size_t> differing;     // 0-based steps whose examples differ
  Vector bound_prefix;                    // 2L * sum of eta over differing steps < t, per t
  double bound = 0.0;                     // 2L * sum over all differing steps
  bool recursion_holds = true;
  std::optional<std::size_t> first_violation;
};

/// Trains on both datasets from the same start and tracks ||theta^m_t - theta^M_t||.
/// If `declared_positions` is given, examples may differ only there.
JointTrace joint_divergence_trace(const BoundedProblem& problem, std::span<const LabeledExample> s1,
                                  std::span<const LabeledExample> s2, std::span<const double> step_sizes,
                                  const Vector& theta0,
                                  std::optional<std::vector<std::size_t>> declared_positions = std::nullopt);

/// Draws n examples: x from the marginal conditioned on ||x|| <= B, y = +1 w.p. labeler(x).
std::vector<LabeledExample> synthesize_dataset(const LabeledDistribution& source, std::size_t n, double bound,
                                               std::uint64_t seed);

LabeledExample draw_example(const LabeledDistribution& source, double bound, Rng& rng);

}  // namespace cfr
