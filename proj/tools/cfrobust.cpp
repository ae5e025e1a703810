#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "cfr/bounds.hpp"
#include "cfr/counterfactual.hpp"
#include "cfr/io.hpp"
#include "cfr/parallel.hpp"
#include "cfr/pipeline.hpp"
#include "cfr/stability.hpp"
#include "cfr/training.hpp"

namespace {

using namespace cfr;

enum Exit { kOk = 0, kConfigError = 2, kInfeasible = 3, kBoundViolation = 4, kInternal = 5 };

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Infeasible: return kInfeasible;
    case ErrorCode::Internal: return kInternal;
    default: return kConfigError;
  }
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 0;
  std::string stage;
  std::string out = "out";
};

void add_common(CLI::App* app, Common& c, bool need_config) {
  auto* cfg = app->add_option("--config", c.config, "Experiment config (JSON)");
  if (need_config) cfg->required();
  app->add_option("--seed", c.seed, "Override the config's root seed");
  app->add_option("--jobs", c.jobs, "Worker thread cap (0 = all cores)");
  app->add_option("--stage", c.stage, "Run only this stage, loading upstream outputs from --out");
  app->add_option("--out", c.out, "Output directory");
}

void print_summary(const RunResult& r) {
  std::printf("config_hash=%s seed=%llu\n", r.manifest.config_hash.c_str(),
              static_cast<unsigned long long>(r.manifest.seed));
  for (const auto& [stage, files] : r.manifest.outputs) std::printf("  %-16s %zu file(s)\n", stage.c_str(), files.size());
  std::printf("bounds: %zu verified, %zu violated, %zu vacuous, %zu skipped, %zu outside premise\n", r.bound_rows,
              r.bound_violations, r.bound_vacuous, r.bound_skipped, r.bound_outside_premise);
}

int run_stages(const Common& c, std::optional<Stage> only, bool compute_missing) {
  parallel::set_max_workers(c.jobs);
  const ExperimentConfig cfg = ExperimentConfig::load(c.config, c.seed);
  RunOptions opts;
  opts.out = c.out;
  opts.only = c.stage.empty() ? only : std::optional<Stage>(parse_stage(c.stage));
  opts.compute_missing_upstream = compute_missing;
  const RunResult r = run_pipeline(cfg, opts);
  print_summary(r);
  return r.bound_violations > 0 ? kBoundViolation : kOk;
}

int batch_counterfactuals(const std::string& model_path, const std::string& queries_path, const std::string& norm,
                          const std::string& mode, double slack, const std::string& manifold_path,
                          const std::string& out) {
  const Model model = io::model_from_json(io::read_json(model_path));
  const auto queries = io::read_numeric_csv(queries_path);
  std::vector<FeatureVector> manifold;
  if (!manifold_path.empty()) manifold = io::read_numeric_csv(manifold_path);

  std::vector<std::string> cols{"id"};
  for (std::size_t i = 0; i < model.dim(); ++i) cols.push_back("x" + std::to_string(i));
  for (std::size_t i = 0; i < model.dim(); ++i) cols.push_back("xbar" + std::to_string(i));
  for (const char* c : {"cost", "m_xbar", "valid", "status", "method", "iterations", "candidates"}) cols.push_back(c);
  io::Csv csv(cols);
  bool any_infeasible = false;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    CounterfactualQuery q{queries[i], parse_norm(norm), parse_mode(mode), manifold, slack};
    csv.row().add(i).add(std::span<const double>(queries[i]));
    try {
      const CounterfactualResult r = find_counterfactual(model, q);
      csv.add(std::span<const double>(r.xbar)).add(r.cost).add(model.predict(r.xbar)).add(r.valid).add("ok");
      csv.add(r.method).add(r.iterations).add(r.candidates_examined);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Infeasible && e.code() != ErrorCode::Precondition) throw;
      any_infeasible = any_infeasible || e.code() == ErrorCode::Infeasible;
      for (std::size_t k = 0; k < model.dim() + 2; ++k) csv.add("");
      csv.add(false).add(e.code() == ErrorCode::Infeasible ? "infeasible" : "already-positive").add("none");
      csv.add("").add("");
    }
  }
  if (out.empty())
    std::cout << csv.str();
  else
    csv.save(out);
  return any_infeasible ? kInfeasible : kOk;
}

int batch_stability(const std::string& model_path, const std::string& points_path, std::size_t k, double sigma2,
                    double tau, std::optional<double> gamma, std::uint64_t seed, const std::string& out) {
  const Model model = io::model_from_json(io::read_json(model_path));
  const auto points = io::read_numeric_csv(points_path);
  io::Json reports = io::Json::array();
  for (std::size_t i = 0; i < points.size(); ++i) {
    StabilityConfig cfg;
    cfg.k = k;
    cfg.sigma2 = sigma2;
    cfg.tau = tau;
    cfg.seed = seeding::derive(seed, "stability", i);
    const StabilityReport r = evaluate_stability(model, points[i], cfg, gamma);
    io::Json j{{"x", points[i]}, {"k", k},       {"sigma2", sigma2},  {"Rhat", r.rhat},
               {"tau", tau},     {"pass", r.pass}, {"seed", cfg.seed}, {"R", nullptr}};
    if (r.R) j["R"] = *r.R;
    reports.push_back(j);
  }
  if (out.empty())
    std::cout << reports.dump(2) << "\n";
  else
    io::write_json(out, reports);
  return kOk;
}

// Quick internal consistency checks; the full suites live under tests/.
int selftest() {
  int failures = 0;
  auto check = [&](const char* name, bool ok) {
    std::printf("%s %s\n", ok ? "PASS" : "FAIL", name);
    failures += !ok;
  };

  const BoundedProblem p = BoundedProblem::logistic(1.0, 2);
  const LossConstants lc = p.constants();
  check("logistic constants at B=1",
        std::abs(lc.lipschitz - 0.7310585786300049) < 1e-12 && std::abs(lc.smoothness - 0.25) < 1e-15 &&
            std::abs(lc.admissibility - 0.2689414213699951) < 1e-12);

  check("expansive at eta = 2/alpha", check_expansive(p, p.max_step_size(), 2000, 1).max_ratio <= 1.0 + 1e-9);

  const Distribution mu = Distribution::gaussian({0.0}, 1.0);
  check("kappa(mu, mu) = 1", kappa(mu, mu, 1000, 2).value == 1.0);

  const Model m = Model::linear_sigmoid({1.0, 1.0}, -1.0);
  const CounterfactualResult cf = find_counterfactual(m, {{0.0, 0.0}, Norm::L2, CounterfactualMode::Free, {}, 0.0});
  check("closed-form counterfactual", cf.valid && std::abs(cf.cost - 1.0 / std::sqrt(2.0)) < 1e-9);

  StabilityConfig sc;
  sc.seed = 3;
  const auto samples = draw_neighbourhood(cf.xbar, sc);
  check("Rhat >= R at gamma = Lipschitz",
        stability_Rhat(m, cf.xbar, samples) >= stability_R(m, lipschitz_constant(m).value, cf.xbar, samples));

  BoundQuery q;
  q.theorem = Theorem::T3;
  q.epsilon = 0.2;
  q.k = 200;
  check("T3 rhs", std::abs(rhs(q) - 2.0 * std::exp(-4.0)) < 1e-15);

  return failures == 0 ? kOk : kInternal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual robustness under model change: generation, stability, bound verification"};
  app.require_subcommand(1);

  Common run_c, verify_c, stab_c, cf_c;
  auto* run = app.add_subcommand("run", "Run the full pipeline (or one stage with --stage)");
  add_common(run, run_c, true);

  auto* verify = app.add_subcommand("verify-bounds", "Run the bound grid, computing missing upstream stages");
  add_common(verify, verify_c, true);

  auto* stab = app.add_subcommand("stability", "Stability scores for a pipeline run or a batch of points");
  add_common(stab, stab_c, false);
  std::string stab_model, stab_points, stab_file;
  std::size_t stab_k = 100;
  double stab_sigma2 = 0.01, stab_tau = 0.5;
  std::optional<double> stab_gamma;
  stab->add_option("--model", stab_model, "Model JSON (batch mode)");
  stab->add_option("--points", stab_points, "CSV of points (batch mode)");
  stab->add_option("--k", stab_k, "Neighbourhood size");
  stab->add_option("--sigma2", stab_sigma2, "Neighbourhood variance");
  stab->add_option("--tau", stab_tau, "Robustness threshold");
  stab->add_option("--gamma", stab_gamma, "Lipschitz constant for R");
  stab->add_option("--report", stab_file, "Write the JSON report here instead of stdout");

  auto* cf = app.add_subcommand("counterfactual", "Counterfactuals for a pipeline run or a batch of queries");
  add_common(cf, cf_c, false);
  std::string cf_model, cf_queries, cf_norm = "l2", cf_mode = "free", cf_manifold, cf_file;
  double cf_slack = 0.0;
  cf->add_option("--model", cf_model, "Model JSON (batch mode)");
  cf->add_option("--queries", cf_queries, "CSV of query points (batch mode)");
  cf->add_option("--norm", cf_norm, "l1 or l2");
  cf->add_option("--mode", cf_mode, "free or manifold");
  cf->add_option("--slack", cf_slack, "Require m(xbar) >= 0.5 + slack");
  cf->add_option("--manifold", cf_manifold, "CSV of candidate points for manifold mode");
  cf->add_option("--results", cf_file, "Write the results CSV here instead of stdout");

  auto* plot = app.add_subcommand("emit-plot-data", "Long-format CSV for one figure from a finished run");
  std::string plot_out = "out", figure;
  plot->add_option("--out", plot_out, "Run output directory");
  plot->add_option("--figure", figure, "bound-curves, validity-vs-tau or divergence-trace")->required();

  auto* self = app.add_subcommand("selftest", "Quick internal consistency checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return run_stages(run_c, std::nullopt, false);
    if (*verify) return run_stages(verify_c, Stage::Bounds, true);
    if (*stab) {
      if (!stab_model.empty()) {
        if (stab_points.empty()) throw Error(ErrorCode::Configuration, "stability: --model needs --points");
        return batch_stability(stab_model, stab_points, stab_k, stab_sigma2, stab_tau, stab_gamma,
                               stab_c.seed.value_or(0), stab_file);
      }
      if (stab_c.config.empty()) throw Error(ErrorCode::Configuration, "stability: give --config or --model");
      return run_stages(stab_c, Stage::Stability, true);
    }
    if (*cf) {
      if (!cf_model.empty()) {
        if (cf_queries.empty()) throw Error(ErrorCode::Configuration, "counterfactual: --model needs --queries");
        return batch_counterfactuals(cf_model, cf_queries, cf_norm, cf_mode, cf_slack, cf_manifold, cf_file);
      }
      if (cf_c.config.empty()) throw Error(ErrorCode::Configuration, "counterfactual: give --config or --model");
      return run_stages(cf_c, Stage::Counterfactuals, true);
    }
    if (*plot) {
      std::printf("%s\n", emit_plot_data(plot_out, parse_figure(figure)).string().c_str());
      return kOk;
    }
    if (*self) return selftest();
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", to_string(e.code()), e.what());
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error [configuration]: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error [internal]: %s\n", e.what());
    return kInternal;
  }
  return kOk;
}
