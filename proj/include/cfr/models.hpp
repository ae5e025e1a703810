#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "cfr/linalg.hpp"

namespace cfr {

/// Decisions are I(m(x) >= threshold); counterfactuals target this value.
inline constexpr double kDecisionThreshold = 0.5;

double sigmoid(double z) noexcept;
double logit(double p) noexcept;

/// Axis-aligned box, used as a sampling domain and as the support of tabulated models.
struct Box {
  Vector lower;
  Vector upper;

  std::size_t dim() const noexcept { return lower.size(); }
  double volume() const noexcept;
  bool contains(std::span<const double> x) const noexcept;
};

enum class ModelKind { LinearSigmoid, Tabulated, Wrapped };

const char* to_string(ModelKind kind) noexcept;

/// A predictor m: R^d -> [0,1].
///
/// Immutable value type; copies share state. Three kinds exist:
///  - linear-sigmoid: sigmoid(w.x + b), Lipschitz constant ||w||_2 / 4 in closed form;
///  - tabulated: multilinear interpolation of node values on a regular grid over a box,
///    coordinates clamped to the box outside it (a constant model is a 1-node table);
///  - wrapped: an arbitrary callable, optionally with a declared Lipschitz constant.
///    Output shifts clamp(base(x) + c) are wrapped models that remain serializable.
class Model {
 public:
  using Fn = std::function<double(std::span<const double>)>;

  static Model linear_sigmoid(Vector weights, double bias = 0.0);
  static Model constant(std::size_t dim, double value);
  /// `shape[i]` nodes along axis i (>= 1); `values` in row-major order, last axis fastest.
  static Model tabulated(Box box, std::vector<std::size_t> shape, Vector values);
  static Model wrapped(std::size_t dim, Fn fn, std::optional<double> lipschitz = std::nullopt,
                       std::optional<Box> domain = std::nullopt);
  /// clamp(base(x) + offset, 0, 1).
  static Model output_shift(const Model& base, double offset);

  ModelKind kind() const noexcept;
  std::size_t dim() const noexcept;

  double predict(std::span<const double> x) const;
  /// Pre-sigmoid value. For linear-sigmoid this is w.x + b; otherwise logit(predict(x)),
  /// which is infinite where the output saturates at 0 or 1.
  double margin(std::span<const double> x) const;
  /// Gradient of predict. Analytic for linear-sigmoid, central differences otherwise.
  Vector gradient(std::span<const double> x) const;

  // linear-sigmoid only
  const Vector& weights() const;
  double bias() const;

  // tabulated only
  const Box& table_box() const;
  const std::vector<std::size_t>& table_shape() const;
  const Vector& table_values() const;

  // output-shift wrappers only
  bool is_output_shift() const noexcept;
  const Model& shift_base() const;
  double shift_offset() const;

  /// Lipschitz constant declared at construction (closed form for linear-sigmoid).
  std::optional<double> declared_lipschitz() const noexcept;
  /// Domain for empirical estimation: the attached box, or the table box.
  std::optional<Box> domain() const;
  Model with_domain(Box domain) const;

  struct State;

 private:
  explicit Model(std::shared_ptr<const State> s) : state_(std::move(s)) {}
  std::shared_ptr<const State> state_;
};

struct LipschitzResult {
  double value = 0.0;
  /// True when the value is an empirical lower-bound estimate rather than a certified constant.
  bool estimate = false;
};

struct LipschitzOptions {
  std::size_t pairs = 10000;       // random pairs; the same number of near-pairs is added
  double near_distance = 1e-3;
  std::uint64_t seed = 0x5eed;
};

/// Closed form for linear-sigmoid, declared value when present, otherwise the empirical
/// max of |m(x)-m(y)|/||x-y|| over sampled pairs in the model's domain (flagged estimate).
LipschitzResult lipschitz_constant(const Model& model, const LipschitzOptions& opts = {});

/// Max of per-model constants. Throws on an empty list.
LipschitzResult ensemble_lipschitz(std::span<const Model> models, const LipschitzOptions& opts = {});

}  // namespace cfr
