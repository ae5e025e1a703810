#include "cfr/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <variant>

#include "cfr/rng.hpp"

namespace cfr {

double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

double Box::volume() const noexcept {
  double v = 1.0;
  for (std::size_t i = 0; i < lower.size(); ++i) v *= upper[i] - lower[i];
  return v;
}

bool Box::contains(std::span<const double> x) const noexcept {
  for (std::size_t i = 0; i < lower.size(); ++i)
    if (x[i] < lower[i] || x[i] > upper[i]) return false;
  return true;
}

const char* to_string(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::LinearSigmoid: return "linear-sigmoid";
    case ModelKind::Tabulated: return "tabulated";
    case ModelKind::Wrapped: return "wrapped";
  }
  return "?";
}

namespace {

struct Linear {
  Vector weights;
  double bias = 0.0;
};

struct Table {
  Box box;
  std::vector<std::size_t> shape;
  Vector values;
  std::vector<std::size_t> strides;

  double eval(std::span<const double> x) const {
    const std::size_t d = shape.size();
    std::vector<std::size_t> base(d);
    Vector frac(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      if (shape[i] == 1) continue;
      const double lo = box.lower[i], hi = box.upper[i];
      const double u = (std::clamp(x[i], lo, hi) - lo) / (hi - lo) * double(shape[i] - 1);
      const std::size_t cell = std::min<std::size_t>(std::size_t(u), shape[i] - 2);
      base[i] = cell;
      frac[i] = u - double(cell);
    }
    double acc = 0.0;
    for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
      double w = 1.0;
      std::size_t offset = 0;
      for (std::size_t i = 0; i < d; ++i) {
        const bool up = (corner >> i) & 1U;
        if (shape[i] == 1) {
          if (up) { w = 0.0; break; }
          continue;
        }
        w *= up ? frac[i] : 1.0 - frac[i];
        offset += (base[i] + (up ? 1 : 0)) * strides[i];
      }
      if (w != 0.0) acc += w * values[offset];
    }
    return std::clamp(acc, 0.0, 1.0);
  }
};

struct Wrapped {
  Model::Fn fn;
  // Set for output shifts so they can be serialized.
  std::shared_ptr<const Model> shift_base;
  double shift_offset = 0.0;
};

}  // namespace

struct Model::State {
  std::size_t dim = 0;
  std::variant<Linear, Table, Wrapped> impl;
  std::optional<double> lipschitz;
  std::optional<Box> domain;
};

Model Model::linear_sigmoid(Vector weights, double bias) {
  require(!weights.empty(), ErrorCode::Input, "linear-sigmoid model needs at least one weight");
  require(la::all_finite(weights) && std::isfinite(bias), ErrorCode::Input,
          "linear-sigmoid parameters must be finite");
  auto s = std::make_shared<State>();
  s->dim = weights.size();
  // sigmoid' <= 1/4, and the bias does not enter the gradient.
  s->lipschitz = la::norm2(weights) / 4.0;
  s->impl = Linear{std::move(weights), bias};
  return Model(std::move(s));
}

Model Model::constant(std::size_t dim, double value) {
  require(dim >= 1, ErrorCode::Input, "constant model needs dim >= 1");
  return tabulated(Box{Vector(dim, 0.0), Vector(dim, 1.0)}, std::vector<std::size_t>(dim, 1),
                   Vector{value});
}

Model Model::tabulated(Box box, std::vector<std::size_t> shape, Vector values) {
  const std::size_t d = shape.size();
  require(d >= 1 && box.lower.size() == d && box.upper.size() == d, ErrorCode::Input,
          "tabulated model: box and shape dimensions differ");
  require(d <= 16, ErrorCode::Input, "tabulated model: at most 16 dimensions");
  std::size_t total = 1;
  for (std::size_t i = 0; i < d; ++i) {
    require(shape[i] >= 1, ErrorCode::Input, "tabulated model: every axis needs >= 1 node");
    require(shape[i] == 1 || box.upper[i] > box.lower[i], ErrorCode::Input,
            "tabulated model: empty box axis");
    total *= shape[i];
  }
  require(values.size() == total, ErrorCode::Input, "tabulated model: value count does not match shape");
  for (double v : values)
    require(v >= 0.0 && v <= 1.0, ErrorCode::Input, "tabulated model: values must lie in [0,1]");

  Table t{std::move(box), std::move(shape), std::move(values), std::vector<std::size_t>(d, 1)};
  for (std::size_t i = d - 1; i-- > 0;) t.strides[i] = t.strides[i + 1] * t.shape[i + 1];

  auto s = std::make_shared<State>();
  s->dim = d;
  if (std::all_of(t.values.begin(), t.values.end(), [&](double v) { return v == t.values[0]; }))
    s->lipschitz = 0.0;
  s->domain = t.box;
  s->impl = std::move(t);
  return Model(std::move(s));
}

Model Model::wrapped(std::size_t dim, Fn fn, std::optional<double> lipschitz, std::optional<Box> domain) {
  require(dim >= 1, ErrorCode::Input, "wrapped model needs dim >= 1");
  require(static_cast<bool>(fn), ErrorCode::Input, "wrapped model needs a callable");
  require(!lipschitz || *lipschitz >= 0.0, ErrorCode::Input, "Lipschitz constant must be non-negative");
  require(!domain || domain->dim() == dim, ErrorCode::Input, "wrapped model: domain dimension mismatch");
  auto s = std::make_shared<State>();
  s->dim = dim;
  s->lipschitz = lipschitz;
  s->domain = std::move(domain);
  s->impl = Wrapped{std::move(fn), nullptr, 0.0};
  return Model(std::move(s));
}

Model Model::output_shift(const Model& base, double offset) {
  require(std::isfinite(offset), ErrorCode::Input, "output shift must be finite");
  auto base_ptr = std::make_shared<const Model>(base);
  auto s = std::make_shared<State>();
  s->dim = base.dim();
  // Adding a constant and clamping never increases the Lipschitz constant.
  s->lipschitz = base.declared_lipschitz();
  s->domain = base.domain();
  s->impl = Wrapped{[base_ptr, offset](std::span<const double> x) {
                      return std::clamp(base_ptr->predict(x) + offset, 0.0, 1.0);
                    },
                    base_ptr, offset};
  return Model(std::move(s));
}

ModelKind Model::kind() const noexcept {
  switch (state_->impl.index()) {
    case 0: return ModelKind::LinearSigmoid;
    case 1: return ModelKind::Tabulated;
    default: return ModelKind::Wrapped;
  }
}

std::size_t Model::dim() const noexcept { return state_->dim; }

double Model::predict(std::span<const double> x) const {
  la::require_dim(x, state_->dim, "predict");
  if (const auto* lin = std::get_if<Linear>(&state_->impl))
    return sigmoid(la::dot(lin->weights, x) + lin->bias);
  if (const auto* tab = std::get_if<Table>(&state_->impl)) return tab->eval(x);
  const double p = std::get<Wrapped>(state_->impl).fn(x);
  return std::clamp(p, 0.0, 1.0);
}

double Model::margin(std::span<const double> x) const {
  if (const auto* lin = std::get_if<Linear>(&state_->impl)) {
    la::require_dim(x, state_->dim, "margin");
    return la::dot(lin->weights, x) + lin->bias;
  }
  return logit(predict(x));
}

Vector Model::gradient(std::span<const double> x) const {
  la::require_dim(x, state_->dim, "gradient");
  if (const auto* lin = std::get_if<Linear>(&state_->impl)) {
    const double p = sigmoid(la::dot(lin->weights, x) + lin->bias);
    return la::scaled(lin->weights, p * (1.0 - p));
  }
  Vector g(state_->dim);
  Vector probe(x.begin(), x.end());
  for (std::size_t i = 0; i < state_->dim; ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + h;
    const double up = predict(probe);
    probe[i] = x[i] - h;
    const double down = predict(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

const Vector& Model::weights() const {
  const auto* lin = std::get_if<Linear>(&state_->impl);
  require(lin != nullptr, ErrorCode::Input, "weights() requires a linear-sigmoid model");
  return lin->weights;
}

double Model::bias() const {
  const auto* lin = std::get_if<Linear>(&state_->impl);
  require(lin != nullptr, ErrorCode::Input, "bias() requires a linear-sigmoid model");
  return lin->bias;
}

const Box& Model::table_box() const {
  const auto* t = std::get_if<Table>(&state_->impl);
  require(t != nullptr, ErrorCode::Input, "table_box() requires a tabulated model");
  return t->box;
}

const std::vector<std::size_t>& Model::table_shape() const {
  const auto* t = std::get_if<Table>(&state_->impl);
  require(t != nullptr, ErrorCode::Input, "table_shape() requires a tabulated model");
  return t->shape;
}

const Vector& Model::table_values() const {
  const auto* t = std::get_if<Table>(&state_->impl);
  require(t != nullptr, ErrorCode::Input, "table_values() requires a tabulated model");
  return t->values;
}

bool Model::is_output_shift() const noexcept {
  const auto* w = std::get_if<Wrapped>(&state_->impl);
  return w != nullptr && w->shift_base != nullptr;
}

const Model& Model::shift_base() const {
  require(is_output_shift(), ErrorCode::Input, "shift_base() requires an output-shift model");
  return *std::get<Wrapped>(state_->impl).shift_base;
}

double Model::shift_offset() const {
  require(is_output_shift(), ErrorCode::Input, "shift_offset() requires an output-shift model");
  return std::get<Wrapped>(state_->impl).shift_offset;
}

std::optional<double> Model::declared_lipschitz() const noexcept { return state_->lipschitz; }

std::optional<Box> Model::domain() const { return state_->domain; }

Model Model::with_domain(Box domain) const {
  require(domain.dim() == dim(), ErrorCode::Input, "with_domain: dimension mismatch");
  auto s = std::make_shared<State>(*state_);
  s->domain = std::move(domain);
  return Model(std::move(s));
}

LipschitzResult lipschitz_constant(const Model& model, const LipschitzOptions& opts) {
  if (auto declared = model.declared_lipschitz()) return {*declared, false};

  const auto domain = model.domain();
  require(domain.has_value(), ErrorCode::Configuration,
          "empirical Lipschitz estimation needs a sampling domain attached to the model");

  const std::size_t d = model.dim();
  Rng rng = make_rng(opts.seed, "lipschitz");
  auto draw = [&](Vector& x) {
    for (std::size_t i = 0; i < d; ++i)
      x[i] = std::uniform_real_distribution<double>(domain->lower[i], domain->upper[i])(rng);
  };

  double best = 0.0;
  Vector x(d), y(d), dir(d);
  std::normal_distribution<double> gauss;
  for (std::size_t p = 0; p < opts.pairs; ++p) {
    draw(x);
    draw(y);
    const double dist = la::dist2(x, y);
    if (dist > 0.0) best = std::max(best, std::abs(model.predict(x) - model.predict(y)) / dist);

    // Near pair along a random direction catches local slope.
    draw(x);
    for (double& v : dir) v = gauss(rng);
    const double n = la::norm2(dir);
    if (n == 0.0) continue;
    for (std::size_t i = 0; i < d; ++i) y[i] = x[i] + opts.near_distance * dir[i] / n;
    const double near = la::dist2(x, y);
    if (near > 0.0) best = std::max(best, std::abs(model.predict(x) - model.predict(y)) / near);
  }
  return {best, true};
}

LipschitzResult ensemble_lipschitz(std::span<const Model> models, const LipschitzOptions& opts) {
  require(!models.empty(), ErrorCode::Input, "ensemble_lipschitz: empty model list");
  LipschitzResult out;
  for (const Model& m : models) {
    const LipschitzResult r = lipschitz_constant(m, opts);
    out.value = std::max(out.value, r.value);
    out.estimate = out.estimate || r.estimate;
  }
  return out;
}

}  // namespace cfr
