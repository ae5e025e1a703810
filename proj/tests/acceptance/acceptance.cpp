// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "cfr/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cfr;

namespace {

const fs::path kConfigs = fs::path(CFR_SOURCE_DIR) / "configs";
const fs::path kScratch = fs::current_path() / "acceptance_runs";

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s criterion %d (%s): %s [%.2fs]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
  std::fflush(stdout);
  failures += !o.pass;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Vector unit_ball(std::mt19937_64& rng, std::size_t d, double radius) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u;
  Vector v(d);
  for (double& x : v) x = g(rng);
  const double scale = radius * std::pow(u(rng), 1.0 / double(d)) / la::norm2(v);
  for (double& x : v) x *= scale;
  return v;
}

// Direct evaluation of the logistic loss and its gradient, independent of the library.
double logistic(const Vector& th, const Vector& x, int y) { return std::log1p(std::exp(-y * la::dot(x, th))); }
Vector logistic_grad(const Vector& th, const Vector& x, int y) {
  const double s = -y / (1.0 + std::exp(y * la::dot(x, th)));
  return la::scaled(x, s);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "timings.json")
      files[fs::relative(e.path(), root).string()] = slurp(e.path());
  return files;
}

RunResult run_config(const std::string& name, const fs::path& out) {
  fs::remove_all(out);
  RunOptions o;
  o.out = out;
  return run_pipeline(ExperimentConfig::load(kConfigs / name), o);
}

// ---------------------------------------------------------------------------

Outcome loss_constants() {
  const auto t0 = std::chrono::steady_clock::now();
  const BoundedProblem p = BoundedProblem::logistic(1.0, 2);
  const LossConstants c = p.constants();
  const double L = 1.0 / (std::exp(-1.0) + 1.0), alpha = 0.25, xi = 1.0 / (std::exp(1.0) + 1.0);
  const bool constants_ok = std::abs(c.lipschitz - L) < 1e-15 && c.smoothness == alpha && std::abs(c.admissibility - xi) < 1e-15;

  std::mt19937_64 rng(1);
  std::size_t lip = 0, smooth = 0, adm = 0;
  for (int i = 0; i < 100000; ++i) {
    const Vector a = unit_ball(rng, 2, 1.0), b = unit_ball(rng, 2, 1.0), x = unit_ball(rng, 2, 1.0);
    const int y = (rng() & 1) ? 1 : -1;
    const LabeledExample z{x, y};
    const double df = std::abs(p.value(a, z) - p.value(b, z));
    const double dth = la::dist2(a, b);
    lip += df > L * dth + 1e-9;
    smooth += la::dist2(p.gradient(a, z), p.gradient(b, z)) > alpha * dth + 1e-9;
    adm += df < xi * std::abs(la::dot(x, a) - la::dot(x, b)) - 1e-9;
  }
  const double secs = seconds_since(t0);
  return {constants_ok && lip + smooth + adm == 0 && secs < 10.0,
          fmt("1e5 triples; violations lipschitz=%zu smooth=%zu admissible=%zu; %.2fs", lip, smooth, adm, secs)};
}

Outcome gradients() {
  const BoundedProblem p = BoundedProblem::logistic(1.0, 3);
  std::mt19937_64 rng(2);
  double worst_loss = 0.0, worst_model = 0.0;
  const double h = 1e-5;
  for (int i = 0; i < 1000; ++i) {
    const Vector th = unit_ball(rng, 3, 1.0), x = unit_ball(rng, 3, 1.0);
    const int y = (rng() & 1) ? 1 : -1;
    const Vector an = p.gradient(th, {x, y});
    Vector fd(3);
    for (std::size_t j = 0; j < 3; ++j) {
      Vector a = th, b = th;
      a[j] += h;
      b[j] -= h;
      fd[j] = (logistic(a, x, y) - logistic(b, x, y)) / (2 * h);
    }
    worst_loss = std::max(worst_loss, la::dist2(an, fd) / std::max(la::norm2(fd), 1e-3));
    worst_loss = std::max(worst_loss, la::dist2(an, logistic_grad(th, x, y)) / std::max(la::norm2(fd), 1e-3));

    const Model m = Model::linear_sigmoid(la::scaled(th, 3.0), 0.2);
    const Vector gm = m.gradient(x);
    Vector fdm(3);
    for (std::size_t j = 0; j < 3; ++j) {
      Vector a = x, b = x;
      a[j] += h;
      b[j] -= h;
      fdm[j] = (m.predict(a) - m.predict(b)) / (2 * h);
    }
    worst_model = std::max(worst_model, la::dist2(gm, fdm) / std::max(la::norm2(fdm), 1e-3));
  }
  return {worst_loss <= 1e-6 && worst_model <= 1e-6,
          fmt("1e3 points; max relative error loss=%.2e model=%.2e", worst_loss, worst_model)};
}

Outcome update_rule() {
  const BoundedProblem p = BoundedProblem::logistic(1.0, 2);
  const double alpha = p.constants().smoothness, L = p.constants().lipschitz;
  bool ok = true;
  std::string detail;
  for (double eta : {2.0 / alpha, 1.0 / alpha}) {
    const ExpansiveReport e = check_expansive(p, eta, 10000, 3);
    const BoundedReport b = check_bounded(p, eta, 10000, 4);
    ok = ok && e.max_ratio <= 1.0 + 1e-9 && b.max_step <= eta * L + 1e-12;
    detail += fmt("eta=%g maxRatio=%.12f maxStep=%.6f<=%.6f; ", eta, e.max_ratio, b.max_step, eta * L);
  }
  return {ok, detail};
}

Outcome retraining_divergence() {
  const auto t0 = std::chrono::steady_clock::now();
  const Distribution mu = Distribution::gaussian({0.0, 0.0}, 0.1);
  const LabeledDistribution src{mu, Model::linear_sigmoid({4.0, -3.0})};
  const BoundedProblem p = BoundedProblem::logistic(1.0, 2);
  const LossConstants c = p.constants();
  const std::size_t n = 200;
  const auto xs = mu.sample(100000, 5);
  std::size_t runs = 0, param_bad = 0, output_bad = 0;
  double worst_param = 0.0, worst_output = 0.0;
  for (std::size_t r : {1, 2, 5}) {
    RetrainSetup setup{p, synthesize_dataset(src, n, 1.0, 100 + r), constant_steps(n, 1.0 / c.smoothness),
                       {0.0, 0.0}, src};
    GeneratorConfig g;
    g.kind = GeneratorKind::RetrainPerturbed;
    g.r = r;
    const ModelChangeEnsemble ens = generate_ensemble(g, setup, 50, 200 + r);
    for (std::size_t j = 0; j < ens.size(); ++j, ++runs) {
      const JointTrace jt = joint_divergence_trace(p, setup.data, ens.member_data[j], setup.step_sizes, setup.theta0);
      const double pb = theorem3_parameter_bound(c, setup.step_sizes, jt.differing);
      const double ob = theorem3_bound_delta(c, setup.step_sizes, jt.differing);
      param_bad += jt.deltas.back() > pb;
      if (pb > 0) worst_param = std::max(worst_param, jt.deltas.back() / pb);
      const Estimate d = l2_model_distance(ens.original, ens.members[j], xs);
      output_bad += d.value > ob + 3.0 * d.std_error;
      if (ob > 0) worst_output = std::max(worst_output, d.value / ob);
    }
  }
  const double secs = seconds_since(t0);
  return {param_bad + output_bad == 0 && secs < 60.0,
          fmt("%zu runs (50 per r in {1,2,5}); violations param=%zu output=%zu; max ratio to bound param=%.3f "
              "output=%.3f; %.2fs",
              runs, param_bad, output_bad, worst_param, worst_output, secs)};
}

Outcome bound_rows(const fs::path& out, Theorem theorem, std::size_t expected, const Vector& eps_filter) {
  const io::CsvTable t = io::read_csv(out / "bounds.csv");
  const auto col = [&](const char* n) { return t.column(n); };
  std::size_t rows = 0, bad = 0, nonvac = 0;
  double worst_gap = -1.0;
  for (const auto& r : t.rows) {
    if (r[col("theorem")] != to_string(theorem)) continue;
    const double eps = io::parse_double(r[col("epsilon")]);
    bool keep = eps_filter.empty();
    for (double e : eps_filter) keep = keep || std::abs(e - eps) < 1e-12;
    if (!keep) continue;
    ++rows;
    const std::string status = r[col("status")];
    if (status.rfind("skipped", 0) == 0 || status == "outside-premise") {
      ++bad;
      continue;
    }
    if (io::parse_double(r[col("trials")]) != 10000) ++bad;
    const double lo = io::parse_double(r[col("ci_lo")]), rhs = io::parse_double(r[col("rhs")]);
    bad += lo > rhs;
    nonvac += rhs < 1.0;
    worst_gap = std::max(worst_gap, lo - rhs);
  }
  return {rows == expected && bad == 0,
          fmt("%zu/%zu grid rows, %zu non-vacuous, %zu violated or unusable; max(ci_lo - rhs)=%.3g", rows, expected,
              nonvac, bad, worst_gap)};
}

Outcome counterfactual_optimality() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 2.0);
  double worst_linear = 0.0;
  std::size_t linear_done = 0;
  while (linear_done < 100) {
    const Vector w{g(rng), g(rng)};
    const double b = g(rng);
    const Vector x{g(rng), g(rng)};
    const double margin = la::dot(w, x) + b;
    if (margin >= 0.0) continue;
    const Model m = Model::linear_sigmoid(w, b);
    const CounterfactualResult r = find_counterfactual(m, {x, Norm::L2, CounterfactualMode::Free, {}, 0.0});
    const double closed = -margin / la::norm2(w);
    worst_linear = std::max(worst_linear, r.valid ? std::abs(r.cost - closed) : 1.0);
    ++linear_done;
  }

  // Non-linear toy table on [-2,2]^2: a tilted bump, so the feasible region is an ellipse-like blob.
  const std::size_t nodes = 21;
  Vector values;
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t j = 0; j < nodes; ++j) {
      const double u = -2.0 + 4.0 * double(i) / double(nodes - 1), v = -2.0 + 4.0 * double(j) / double(nodes - 1);
      values.push_back(0.9 * std::exp(-((u - 0.5) * (u - 0.5) + 2.0 * (v + 0.3) * (v + 0.3) - 0.8 * u * v)));
    }
  const Model toy = Model::tabulated(Box{{-2.0, -2.0}, {2.0, 2.0}}, {nodes, nodes}, values);
  const double h = 0.01;
  std::vector<FeatureVector> feasible;
  for (int i = 0; i <= 400; ++i)
    for (int j = 0; j <= 400; ++j) {
      const FeatureVector p{-2.0 + h * i, -2.0 + h * j};
      if (toy.predict(p) >= 0.5) feasible.push_back(p);
    }
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::size_t toy_done = 0, toy_bad = 0;
  double worst_excess = -1.0;
  while (toy_done < 30) {
    const FeatureVector x{u(rng), u(rng)};
    if (toy.predict(x) >= 0.5) continue;
    double oracle = 1e300;
    for (const auto& p : feasible) oracle = std::min(oracle, la::dist2(x, p));
    const CounterfactualResult r = find_counterfactual(toy, {x, Norm::L2, CounterfactualMode::Free, {}, 0.0});
    const double excess = r.cost - oracle;
    toy_bad += !r.valid || excess > h * std::sqrt(2.0);
    worst_excess = std::max(worst_excess, excess);
    ++toy_done;
  }
  return {worst_linear <= 1e-9 && toy_bad == 0,
          fmt("linear: 100 queries, max |cost - closed form|=%.2e; table: %zu queries, %zu over oracle + h*sqrt2, "
              "max(cost - oracle)=%.4f",
              worst_linear, toy_done, toy_bad, worst_excess)};
}

Outcome stability_dominance() {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t violations = 0;
  double min_gap = 1e300;
  for (int c = 0; c < 100; ++c) {
    const std::size_t d = 1 + c % 4;
    Vector w(d), x(d);
    for (double& v : w) v = 3.0 * g(rng);
    for (double& v : x) v = g(rng);
    const Model m = Model::linear_sigmoid(w, g(rng));
    GeneratorConfig gen;
    gen.kind = GeneratorKind::ParameterBall;
    gen.radius = u(rng);
    const ModelChangeEnsemble ens = generate_ensemble(gen, m, 10, rng());
    std::vector<Model> all = ens.members;
    all.push_back(m);
    const double gamma = ensemble_lipschitz(all).value;
    StabilityConfig cfg;
    cfg.k = 10 + rng() % 500;
    cfg.sigma2 = std::pow(10.0, -3.0 + 3.0 * u(rng));
    cfg.seed = rng();
    const auto samples = draw_neighbourhood(x, cfg);
    const double gap = stability_Rhat(m, x, samples) - stability_R(m, gamma, x, samples);
    violations += gap < 0.0;
    min_gap = std::min(min_gap, gap);
  }
  return {violations == 0, fmt("100 cases; violations=%zu; min(Rhat - R)=%.3e", violations, min_gap)};
}

Outcome robustness_direction(const fs::path& out) {
  const io::CsvTable t = io::read_csv(out / "stability.csv");
  std::size_t n_pass = 0, n_fail = 0;
  double v_pass = 0.0, v_fail = 0.0;
  for (const auto& r : t.rows) {
    const double rhat = io::parse_double(r[t.column("Rhat")]), v = io::parse_double(r[t.column("validity_rate")]);
    if (rhat >= 0.7) {
      ++n_pass;
      v_pass += v;
    } else {
      ++n_fail;
      v_fail += v;
    }
  }
  v_pass = n_pass ? v_pass / double(n_pass) : 0.0;
  v_fail = n_fail ? v_fail / double(n_fail) : 0.0;
  return {n_pass >= 30 && n_fail >= 30 && v_pass > v_fail,
          fmt("Rhat>=0.7: %zu counterfactuals, validity %.4f; Rhat<0.7: %zu, validity %.4f", n_pass, v_pass, n_fail,
              v_fail)};
}

// Density-ratio integral by Gauss-Kronrod quadrature, split where the integrand is not smooth.
double kappa_quadrature(const std::function<double(double)>& pt, const std::function<double(double)>& p, double lo,
                        double hi) {
  using boost::math::quadrature::gauss_kronrod;
  const auto f = [&](double x) {
    const double a = pt(x);
    return a == 0.0 ? 0.0 : a * a / p(x);
  };
  return std::sqrt(gauss_kronrod<double, 61>::integrate(f, lo, hi, 15, 1e-13));
}

double normal_pdf(double x, double m, double v) { return std::exp(-(x - m) * (x - m) / (2 * v)) / std::sqrt(2 * M_PI * v); }

Outcome kappa_correctness() {
  struct Pair {
    const char* name;
    Distribution mt, mu;
    std::function<double(double)> pt, p;
    double lo, hi;
    double frozen;  // independent adaptive-quadrature value, frozen
  };
  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<Pair> pairs{
      {"N(1,.25)|N(0,1)", Distribution::gaussian({1.0}, 0.25), Distribution::gaussian({0.0}, 1.0),
       [](double x) { return normal_pdf(x, 1, 0.25); }, [](double x) { return normal_pdf(x, 0, 1); }, -inf, inf,
       1.636212187956749},
      {"N(0,.5)|N(0,1)", Distribution::gaussian({0.0}, 0.5), Distribution::gaussian({0.0}, 1.0),
       [](double x) { return normal_pdf(x, 0, 0.5); }, [](double x) { return normal_pdf(x, 0, 1); }, -inf, inf,
       1.074569931823542},
      {"mix|N(0,2)", Distribution::mixture({0.5, 0.5}, {{{-1.0}, {0.5}}, {{1.0}, {0.5}}}),
       Distribution::gaussian({0.0}, 2.0),
       [](double x) { return 0.5 * normal_pdf(x, -1, 0.5) + 0.5 * normal_pdf(x, 1, 0.5); },
       [](double x) { return normal_pdf(x, 0, 2); }, -inf, inf, 1.0527239556913477},
      {"N(.5,1)|N(0,1.5)", Distribution::gaussian({0.5}, 1.0), Distribution::gaussian({0.0}, 1.5),
       [](double x) { return normal_pdf(x, 0.5, 1.0); }, [](double x) { return normal_pdf(x, 0, 1.5); }, -inf, inf,
       1.096305355675096},
      {"U(-.5,.5)|N(0,1)", Distribution::uniform_box({-0.5}, {0.5}), Distribution::gaussian({0.0}, 1.0),
       [](double) { return 1.0; }, [](double x) { return normal_pdf(x, 0, 1); }, -0.5, 0.5, 1.617129303409027},
  };
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Pair& pr = pairs[i];
    const double oracle = kappa_quadrature(pr.pt, pr.p, pr.lo, pr.hi);
    const KappaEstimate k = kappa(pr.mt, pr.mu, 200000, 300 + i);
    const double z = std::abs(k.value - oracle) / k.std_error;
    ok = ok && std::abs(oracle - pr.frozen) < 1e-9 && z <= 3.0 && k.value >= 1.0 - 3.0 * k.std_error;
    detail += fmt("%s %.4f vs %.4f (%.1f se); ", pr.name, k.value, oracle, z);
  }
  for (const Pair& pr : pairs) {
    ok = ok && kappa(pr.mt, pr.mt, 10000, 9).value == 1.0 && kappa(pr.mu, pr.mu, 10000, 9).value == 1.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      const KappaEstimate k = kappa(pr.mt, pr.mu, 2000, s);
      ok = ok && k.value >= 1.0 - 3.0 * k.std_error;
    }
  }
  return {ok, detail + "self-kappa exactly 1; all estimates >= 1 - 3 se"};
}

Outcome determinism(const fs::path& first) {
  const fs::path second = kScratch / "reference_repeat";
  run_config("reference.json", second);
  const auto a = snapshot(first), b = snapshot(second);
  std::size_t differing = 0;
  for (const auto& [name, content] : a) {
    const auto it = b.find(name);
    differing += it == b.end() || it->second != content;
  }
  differing += b.size() > a.size() ? b.size() - a.size() : 0;
  return {differing == 0 && !a.empty(), fmt("%zu files compared (timings.json excluded), %zu differ", a.size(), differing)};
}

}  // namespace

int main() {
  fs::create_directories(kScratch);
  const fs::path reference = kScratch / "reference";
  const fs::path nomc = kScratch / "nomc_t1";

  report(1, "logistic loss constants", loss_constants);
  report(2, "gradient correctness", gradients);
  report(3, "expansive and bounded updates", update_rule);
  report(4, "retraining divergence", retraining_divergence);

  double reference_secs = 0.0;
  bool reference_ok = false;
  std::string reference_error;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    run_config("reference.json", reference);
    reference_secs = seconds_since(t0);
    reference_ok = true;
  } catch (const std::exception& e) {
    reference_error = e.what();
  }
  report(5, "GOMC bound verification", [&]() -> Outcome {
    if (!reference_ok) return {false, "reference run failed: " + reference_error};
    Outcome o = bound_rows(reference, Theorem::T2, 18, {});
    o.detail += fmt("; reference run %.1fs", reference_secs);
    o.pass = o.pass && reference_secs < 300.0;
    return o;
  });
  report(6, "NOMC bound verification", [&]() -> Outcome {
    run_config("nomc_t1.json", nomc);
    const io::Json meta = io::read_json(nomc / "bounds_meta.json");
    Outcome o = bound_rows(nomc, Theorem::T1, 6, {0.1, 0.2, 0.3});
    o.detail += fmt("; regime %s, estimated eps'=%.4f", meta.at("regime").get<std::string>().c_str(),
                    meta.at("epsilon_prime_estimate").get<double>());
    o.pass = o.pass && meta.at("regime") == "NOMC-consistent";
    return o;
  });
  report(7, "counterfactual optimality", counterfactual_optimality);
  report(8, "stability dominance", stability_dominance);
  report(9, "robustness-test direction", [&]() -> Outcome {
    if (!reference_ok) return {false, "reference run failed"};
    return robustness_direction(reference);
  });
  report(10, "kappa correctness", kappa_correctness);
  report(11, "determinism", [&]() -> Outcome {
    if (!reference_ok) return {false, "reference run failed"};
    return determinism(reference);
  });

  std::printf("%s: %d criterion failure(s)\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
