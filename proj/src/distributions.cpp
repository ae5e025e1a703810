#include "cfr/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace cfr {

const char* to_string(DistributionKind kind) noexcept {
  switch (kind) {
    case DistributionKind::Gaussian: return "gaussian";
    case DistributionKind::GaussianMixture: return "gaussian-mixture";
    case DistributionKind::UniformBox: return "uniform-box";
  }
  return "?";
}

namespace {

void check_component(const GaussianComponent& c, std::size_t dim) {
  require(c.mean.size() == dim && c.variance.size() == dim, ErrorCode::Input,
          "gaussian component: mean/variance dimension mismatch");
  require(la::all_finite(c.mean), ErrorCode::Input, "gaussian component: non-finite mean");
  for (double v : c.variance)
    require(std::isfinite(v) && v > 0.0, ErrorCode::Input, "gaussian component: variance must be > 0");
}

double component_log_density(const GaussianComponent& c, std::span<const double> x) {
  constexpr double log_2pi = 1.8378770664093453;  // ln(2 pi)
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - c.mean[i];
    acc += -0.5 * (log_2pi + std::log(c.variance[i]) + d * d / c.variance[i]);
  }
  return acc;
}

bool box_within(const Box& inner, const Box& outer) {
  for (std::size_t i = 0; i < inner.dim(); ++i)
    if (inner.lower[i] < outer.lower[i] || inner.upper[i] > outer.upper[i]) return false;
  return true;
}

}  // namespace

Distribution Distribution::gaussian(Vector mean, double sigma2) {
  require(std::isfinite(sigma2) && sigma2 > 0.0, ErrorCode::Input, "gaussian: sigma2 must be > 0");
  const std::size_t d = mean.size();
  return gaussian_diag(std::move(mean), Vector(d, sigma2));
}

Distribution Distribution::gaussian_diag(Vector mean, Vector variance) {
  require(!mean.empty(), ErrorCode::Input, "gaussian: dim must be >= 1");
  Distribution out;
  out.kind_ = DistributionKind::Gaussian;
  out.dim_ = mean.size();
  GaussianComponent c{std::move(mean), std::move(variance)};
  check_component(c, out.dim_);
  out.weights_ = {1.0};
  out.components_.push_back(std::move(c));
  return out;
}

Distribution Distribution::mixture(Vector weights, std::vector<GaussianComponent> components) {
  require(!components.empty() && weights.size() == components.size(), ErrorCode::Input,
          "gaussian-mixture: need one positive weight per component");
  const std::size_t d = components.front().mean.size();
  require(d >= 1, ErrorCode::Input, "gaussian-mixture: dim must be >= 1");
  double total = 0.0;
  for (double w : weights) {
    require(std::isfinite(w) && w > 0.0, ErrorCode::Input, "gaussian-mixture: weights must be positive");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-9, ErrorCode::Input, "gaussian-mixture: weights must sum to 1");
  for (const auto& c : components) check_component(c, d);

  Distribution out;
  out.kind_ = DistributionKind::GaussianMixture;
  out.dim_ = d;
  out.weights_ = std::move(weights);
  out.components_ = std::move(components);
  return out;
}

Distribution Distribution::uniform_box(Vector lower, Vector upper) {
  require(!lower.empty() && lower.size() == upper.size(), ErrorCode::Input,
          "uniform-box: bounds dimension mismatch");
  for (std::size_t i = 0; i < lower.size(); ++i)
    require(std::isfinite(lower[i]) && std::isfinite(upper[i]) && upper[i] > lower[i], ErrorCode::Input,
            "uniform-box: need finite lower < upper on every axis");
  Distribution out;
  out.kind_ = DistributionKind::UniformBox;
  out.dim_ = lower.size();
  out.box_ = Box{std::move(lower), std::move(upper)};
  return out;
}

DistributionKind Distribution::kind() const noexcept { return kind_; }

double Distribution::log_density(std::span<const double> x) const {
  la::require_dim(x, dim_, "density");
  if (kind_ == DistributionKind::UniformBox) {
    if (!box_.contains(x)) return -std::numeric_limits<double>::infinity();
    return -std::log(box_.volume());
  }
  if (components_.size() == 1) return component_log_density(components_[0], x);

  Vector terms(components_.size());
  for (std::size_t c = 0; c < components_.size(); ++c)
    terms[c] = std::log(weights_[c]) + component_log_density(components_[c], x);
  const double top = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - top);
  return top + std::log(s);
}

double Distribution::density(std::span<const double> x) const {
  if (kind_ == DistributionKind::UniformBox) {
    la::require_dim(x, dim_, "density");
    return box_.contains(x) ? 1.0 / box_.volume() : 0.0;
  }
  return std::exp(log_density(x));
}

FeatureVector Distribution::draw(Rng& rng) const {
  FeatureVector x(dim_);
  if (kind_ == DistributionKind::UniformBox) {
    for (std::size_t i = 0; i < dim_; ++i)
      x[i] = std::uniform_real_distribution<double>(box_.lower[i], box_.upper[i])(rng);
    return x;
  }
  std::size_t c = 0;
  if (components_.size() > 1) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double cum = 0.0;
    c = components_.size() - 1;
    for (std::size_t j = 0; j < components_.size(); ++j) {
      cum += weights_[j];
      if (u < cum) { c = j; break; }
    }
  }
  const auto& comp = components_[c];
  std::normal_distribution<double> gauss;
  for (std::size_t i = 0; i < dim_; ++i) x[i] = comp.mean[i] + std::sqrt(comp.variance[i]) * gauss(rng);
  return x;
}

std::vector<FeatureVector> Distribution::sample(std::size_t n, std::uint64_t seed) const {
  require(n >= 1, ErrorCode::Input, "sample: n must be >= 1");
  Rng rng = make_rng(seed);
  std::vector<FeatureVector> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw(rng));
  return out;
}

Distribution Distribution::recentered(std::span<const double> center) const {
  la::require_dim(center, dim_, "recentered");
  Distribution out = *this;
  if (kind_ == DistributionKind::UniformBox) {
    for (std::size_t i = 0; i < dim_; ++i) {
      const double half = 0.5 * (box_.upper[i] - box_.lower[i]);
      out.box_.lower[i] = center[i] - half;
      out.box_.upper[i] = center[i] + half;
    }
    return out;
  }
  const Vector shift = la::sub(center, components_[0].mean);
  for (auto& c : out.components_)
    for (std::size_t i = 0; i < dim_; ++i) c.mean[i] += shift[i];
  return out;
}

bool absolutely_continuous(const Distribution& mu_tilde, const Distribution& mu) {
  if (mu_tilde.dim() != mu.dim()) return false;
  if (mu.full_support()) return true;
  if (mu_tilde.kind() != DistributionKind::UniformBox) return false;
  return box_within(mu_tilde.box(), mu.box());
}

Integrability chi2_integrability(const Distribution& mu_tilde, const Distribution& mu) {
  if (!absolutely_continuous(mu_tilde, mu)) return Integrability::Infinite;
  // Bounded support against a bounded-below density on it: ratio is bounded.
  if (mu_tilde.kind() == DistributionKind::UniformBox) return Integrability::Finite;

  // Gaussian against Gaussian, per coordinate: integral of p~^2 / p is finite iff s~^2 < 2 s^2.
  auto dominated = [](const GaussianComponent& t, const GaussianComponent& r) {
    for (std::size_t i = 0; i < t.variance.size(); ++i)
      if (!(t.variance[i] < 2.0 * r.variance[i])) return false;
    return true;
  };
  bool all_finite = true;
  for (const auto& t : mu_tilde.components()) {
    bool any = false;
    for (const auto& r : mu.components()) any = any || dominated(t, r);
    if (!any) {
      // With a single reference component the divergence is certain.
      if (mu.components().size() == 1) return Integrability::Infinite;
      all_finite = false;
    }
  }
  return all_finite ? Integrability::Finite : Integrability::Unknown;
}

KappaEstimate kappa(const Distribution& mu_tilde, const Distribution& mu, std::size_t n_mc, std::uint64_t seed) {
  require(mu_tilde.dim() == mu.dim(), ErrorCode::Input, "kappa: dimension mismatch");
  require(n_mc >= 2, ErrorCode::Input, "kappa: n_mc must be >= 2");
  if (!absolutely_continuous(mu_tilde, mu))
    fail(ErrorCode::AbsoluteContinuity,
         "kappa: sampling distribution is not absolutely continuous w.r.t. the reference");

  // E_{mu~}[p~/p] == integral of (p~/p)^2 d mu.
  Rng rng = make_rng(seed);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n_mc; ++i) {
    const FeatureVector x = mu_tilde.draw(rng);
    const double r = std::exp(mu_tilde.log_density(x) - mu.log_density(x));
    sum += r;
    sum_sq += r * r;
  }
  const double n = static_cast<double>(n_mc);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - sum * mean) / (n - 1.0));
  const double se_mean = std::sqrt(var / n);

  KappaEstimate out;
  out.value = std::sqrt(mean);
  out.std_error = out.value > 0.0 ? se_mean / (2.0 * out.value) : 0.0;

  switch (chi2_integrability(mu_tilde, mu)) {
    case Integrability::Finite: break;
    case Integrability::Infinite:
      out.reliable = false;
      out.warning = "chi-square divergence is infinite; kappa is not integrable and the estimate is meaningless";
      break;
    case Integrability::Unknown:
      out.reliable = false;
      out.warning = "chi-square integrability could not be established; estimate may not converge";
      break;
  }
  return out;
}

Estimate l2_model_distance(const Model& m, const Model& M, std::span<const FeatureVector> samples) {
  require(m.dim() == M.dim(), ErrorCode::Input, "l2_model_distance: models differ in input dimension");
  require(samples.size() >= 2, ErrorCode::Input, "l2_model_distance: need at least two samples");
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& x : samples) {
    const double d = m.predict(x) - M.predict(x);
    const double s = d * d;
    sum += s;
    sum_sq += s * s;
  }
  const double n = static_cast<double>(samples.size());
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - sum * mean) / (n - 1.0));
  const double se_mean = std::sqrt(var / n);

  Estimate out;
  out.value = std::min(1.0, std::sqrt(mean));
  // Delta method; degenerate at zero, where the sample variance is zero too.
  out.std_error = out.value > 0.0 ? se_mean / (2.0 * out.value) : std::sqrt(se_mean);
  return out;
}

Estimate l2_model_distance(const Model& m, const Model& M, const Distribution& mu, std::size_t n_mc,
                           std::uint64_t seed) {
  require(mu.dim() == m.dim(), ErrorCode::Input, "l2_model_distance: distribution dimension mismatch");
  return l2_model_distance(m, M, mu.sample(n_mc, seed));
}

}  // namespace cfr
