#include "cfr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>

#include "cfr/parallel.hpp"
#include "cfr/rng.hpp"

namespace cfr {

namespace fs = std::filesystem;
using io::Json;

const char* to_string(Stage s) noexcept {
  switch (s) {
    case Stage::Synthesize: return "synthesize";
    case Stage::Train: return "train";
    case Stage::Ensemble: return "ensemble";
    case Stage::Profile: return "profile";
    case Stage::Counterfactuals: return "counterfactuals";
    case Stage::Stability: return "stability";
    case Stage::Bounds: return "bounds";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  for (Stage st : kAllStages)
    if (s == to_string(st)) return st;
  fail(ErrorCode::Configuration, "unknown stage '" + s + "'");
}

const char* to_string(PlotFigure f) noexcept {
  switch (f) {
    case PlotFigure::BoundCurves: return "bound-curves";
    case PlotFigure::ValidityVsTau: return "validity-vs-tau";
    case PlotFigure::DivergenceTrace: return "divergence-trace";
  }
  return "?";
}

PlotFigure parse_figure(const std::string& s) {
  for (PlotFigure f : {PlotFigure::BoundCurves, PlotFigure::ValidityVsTau, PlotFigure::DivergenceTrace})
    if (s == to_string(f)) return f;
  fail(ErrorCode::Configuration, "unknown figure '" + s + "' (expected bound-curves, validity-vs-tau or divergence-trace)");
}

// ---------------------------------------------------------------------------------------------
// Config parsing

namespace {

const Json* opt(const Json& j, const char* key) { return j.contains(key) ? &j.at(key) : nullptr; }

const Json& req(const Json& j, const char* key, const std::string& what) {
  require(j.contains(key), ErrorCode::Configuration, what + ": missing key '" + key + "'");
  return j.at(key);
}

std::size_t as_count(const Json& j, const std::string& what) {
  require(j.is_number_unsigned(), ErrorCode::Configuration, what + ": expected a non-negative integer");
  return j.get<std::size_t>();
}

double as_number(const Json& j, const std::string& what) {
  require(j.is_number(), ErrorCode::Configuration, what + ": expected a number");
  const double v = j.get<double>();
  require(std::isfinite(v), ErrorCode::Configuration, what + ": must be finite");
  return v;
}

std::vector<std::size_t> as_counts(const Json& j, const std::string& what) {
  require(j.is_array() && !j.empty(), ErrorCode::Configuration, what + ": expected a non-empty array");
  std::vector<std::size_t> v;
  for (const auto& e : j) v.push_back(as_count(e, what));
  return v;
}

Vector as_numbers(const Json& j, const std::string& what) {
  require(j.is_array() && !j.empty(), ErrorCode::Configuration, what + ": expected a non-empty array");
  Vector v;
  for (const auto& e : j) v.push_back(as_number(e, what));
  return v;
}

std::vector<FeatureVector> as_points(const Json& j, std::size_t dim, const std::string& what) {
  require(j.is_array(), ErrorCode::Configuration, what + ": expected an array of points");
  std::vector<FeatureVector> pts;
  for (const auto& p : j) {
    FeatureVector x = io::vector_from_json(p, what.c_str());
    require(x.size() == dim, ErrorCode::Configuration, what + ": point dimension does not match the data");
    pts.push_back(std::move(x));
  }
  return pts;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const Json& j_in, std::optional<std::uint64_t> seed_override) {
  Json j = j_in;
  io::check_keys(j, {"schema_version", "seed", "data", "train", "perturb", "profile", "counterfactuals", "stability",
                     "bounds", "description"},
                 "config");
  require(req(j, "schema_version", "config") == kSchemaVersion, ErrorCode::Configuration,
          "config: unsupported schema_version (expected 1)");
  if (seed_override) j["seed"] = *seed_override;

  ExperimentConfig c;
  c.seed = as_count(req(j, "seed", "config"), "config seed");

  // data
  const Json& d = req(j, "data", "config");
  io::check_keys(d, {"marginal", "labeler", "n", "bound"}, "data");
  Distribution marginal = io::distribution_from_json(req(d, "marginal", "data"));
  Model labeler = io::model_from_json(req(d, "labeler", "data"));
  require(marginal.dim() == labeler.dim(), ErrorCode::Configuration, "data: marginal and labeler dimensions differ");
  c.data.source = LabeledDistribution{marginal, labeler};
  c.data.n = as_count(req(d, "n", "data"), "data n");
  require(c.data.n >= 1, ErrorCode::Configuration, "data: n must be >= 1");
  c.data.bound = as_number(req(d, "bound", "data"), "data bound");
  require(c.data.bound > 0.0, ErrorCode::Configuration, "data: bound must be > 0");
  const std::size_t dim = marginal.dim();
  const BoundedProblem problem = BoundedProblem::logistic(c.data.bound, dim);

  // train
  const Json& t = req(j, "train", "config");
  io::check_keys(t, {"eta", "step_sizes", "theta0", "unsafe"}, "train");
  require(t.contains("eta") != t.contains("step_sizes"), ErrorCode::Configuration,
          "train: give exactly one of eta or step_sizes");
  if (const Json* e = opt(t, "eta")) c.train.step_sizes = constant_steps(c.data.n, as_number(*e, "train eta"));
  if (const Json* s = opt(t, "step_sizes")) c.train.step_sizes = as_numbers(*s, "train step_sizes");
  require(c.train.step_sizes.size() == c.data.n, ErrorCode::Configuration, "train: need exactly n step sizes");
  c.train.unsafe = t.contains("unsafe") && t.at("unsafe").get<bool>();
  for (double eta : c.train.step_sizes) {
    require(eta > 0.0, ErrorCode::Configuration, "train: step sizes must be > 0");
    require(c.train.unsafe || eta <= problem.max_step_size() * (1.0 + 1e-12), ErrorCode::Configuration,
            "train: step size exceeds 2/alpha (set unsafe to override)");
  }
  c.train.theta0 = t.contains("theta0") ? io::vector_from_json(t.at("theta0"), "train theta0") : Vector(dim, 0.0);
  require(c.train.theta0.size() == dim, ErrorCode::Configuration, "train: theta0 dimension mismatch");
  require(la::norm2(c.train.theta0) <= BoundedProblem::kThetaBound, ErrorCode::Configuration,
          "train: ||theta0|| must be <= 1");

  // perturb
  const Json& p = req(j, "perturb", "config");
  io::check_keys(p, {"generator", "members", "r", "positions", "radius", "shift", "noise"}, "perturb");
  GeneratorConfig& g = c.perturb.generator;
  g.kind = parse_generator_kind(req(p, "generator", "perturb").get<std::string>());
  c.perturb.members = as_count(req(p, "members", "perturb"), "perturb members");
  require(c.perturb.members >= 1, ErrorCode::Configuration, "perturb: members must be >= 1");
  if (const Json* r = opt(p, "r")) g.r = as_count(*r, "perturb r");
  if (const Json* pos = opt(p, "positions")) {
    require(pos->is_array(), ErrorCode::Configuration, "perturb: positions must be an array");
    for (const auto& e : *pos) g.positions.push_back(as_count(e, "perturb positions"));
  }
  if (const Json* r = opt(p, "radius")) g.radius = as_number(*r, "perturb radius");
  if (const Json* s = opt(p, "shift")) g.shift = io::vector_from_json(*s, "perturb shift");
  if (const Json* a = opt(p, "noise")) g.noise = as_number(*a, "perturb noise");
  switch (g.kind) {
    case GeneratorKind::RetrainPerturbed:
      require(g.r <= c.data.n, ErrorCode::Configuration, "perturb: r must not exceed n");
      require(g.positions.empty() || g.positions.size() == g.r, ErrorCode::Configuration,
              "perturb: need exactly r positions");
      for (std::size_t pos : g.positions)
        require(pos < c.data.n, ErrorCode::Configuration, "perturb: position out of range");
      break;
    case GeneratorKind::RetrainBootstrap: break;
    case GeneratorKind::ParameterBall:
      require(g.radius >= 0.0, ErrorCode::Configuration, "perturb: radius must be >= 0");
      require(g.shift.empty() || g.shift.size() == dim, ErrorCode::Configuration, "perturb: shift dimension mismatch");
      break;
    case GeneratorKind::OutputNoise:
      require(g.noise >= 0.0 && g.noise < 1.0, ErrorCode::Configuration, "perturb: noise must lie in [0,1)");
      break;
  }

  // profile
  if (const Json* pr = opt(j, "profile")) {
    io::check_keys(*pr, {"n_mc", "test_points", "n_boot"}, "profile");
    if (const Json* v = opt(*pr, "n_mc")) c.profile.n_mc = as_count(*v, "profile n_mc");
    if (const Json* v = opt(*pr, "test_points")) c.profile.test_points = as_count(*v, "profile test_points");
    if (const Json* v = opt(*pr, "n_boot")) c.profile.n_boot = as_count(*v, "profile n_boot");
    require(c.profile.n_mc >= 2, ErrorCode::Configuration, "profile: n_mc must be >= 2");
    require(c.profile.n_boot >= 100, ErrorCode::Configuration, "profile: n_boot must be >= 100");
  }

  // counterfactuals
  const Json& cf = req(j, "counterfactuals", "config");
  io::check_keys(cf, {"norm", "mode", "slacks", "points", "sample_negatives"}, "counterfactuals");
  if (const Json* v = opt(cf, "norm")) c.counterfactuals.norm = parse_norm(v->get<std::string>());
  if (const Json* v = opt(cf, "mode")) c.counterfactuals.mode = parse_mode(v->get<std::string>());
  if (const Json* v = opt(cf, "slacks")) c.counterfactuals.slacks = as_numbers(*v, "counterfactuals slacks");
  for (double s : c.counterfactuals.slacks)
    require(s >= 0.0 && s < 0.5, ErrorCode::Configuration, "counterfactuals: slacks must lie in [0, 0.5)");
  if (const Json* v = opt(cf, "points")) c.counterfactuals.points = as_points(*v, dim, "counterfactuals points");
  if (const Json* v = opt(cf, "sample_negatives"))
    c.counterfactuals.sample_negatives = as_count(*v, "counterfactuals sample_negatives");
  require(!c.counterfactuals.points.empty() || c.counterfactuals.sample_negatives > 0, ErrorCode::Configuration,
          "counterfactuals: give points or sample_negatives");

  // stability
  const Json& st = req(j, "stability", "config");
  io::check_keys(st, {"k", "sigma2", "sampling", "tau", "tau_grid"}, "stability");
  StabilityConfig& sc = c.stability.config;
  if (const Json* v = opt(st, "k")) sc.k = as_count(*v, "stability k");
  if (const Json* v = opt(st, "sigma2")) sc.sigma2 = as_number(*v, "stability sigma2");
  if (const Json* v = opt(st, "sampling")) {
    sc.sampling = io::distribution_from_json(*v);
    require(sc.sampling->dim() == dim, ErrorCode::Configuration, "stability: sampling dimension mismatch");
  }
  if (const Json* v = opt(st, "tau")) sc.tau = as_number(*v, "stability tau");
  if (const Json* v = opt(st, "tau_grid")) c.stability.tau_grid = as_numbers(*v, "stability tau_grid");
  sc.validate();
  for (double tau : c.stability.tau_grid)
    require(tau >= 0.0 && tau <= 1.0, ErrorCode::Configuration, "stability: tau_grid values must lie in [0,1]");

  // bounds
  if (const Json* b = opt(j, "bounds")) {
    io::check_keys(*b, {"point", "kappa_mc", "grids"}, "bounds");
    if (const Json* v = opt(*b, "point")) {
      FeatureVector x = io::vector_from_json(*v, "bounds point");
      require(x.size() == dim, ErrorCode::Configuration, "bounds: point dimension mismatch");
      c.bounds.point = std::move(x);
    }
    if (const Json* v = opt(*b, "kappa_mc")) c.bounds.kappa_mc = as_count(*v, "bounds kappa_mc");
    require(c.bounds.kappa_mc >= 2, ErrorCode::Configuration, "bounds: kappa_mc must be >= 2");
    if (const Json* grids = opt(*b, "grids")) {
      require(grids->is_array(), ErrorCode::Configuration, "bounds: grids must be an array");
      for (const auto& gj : *grids) {
        io::check_keys(gj, {"theorem", "k", "epsilon", "ell", "trials"}, "bound grid");
        BoundGrid grid;
        grid.theorem = parse_theorem(req(gj, "theorem", "bound grid").get<std::string>());
        grid.k = as_counts(req(gj, "k", "bound grid"), "bound grid k");
        for (std::size_t k : grid.k) require(k >= 1, ErrorCode::Configuration, "bound grid: k must be >= 1");
        grid.epsilon = as_numbers(req(gj, "epsilon", "bound grid"), "bound grid epsilon");
        for (double e : grid.epsilon) require(e >= 0.0, ErrorCode::Configuration, "bound grid: epsilon must be >= 0");
        if (grid.theorem == Theorem::T2) {
          grid.ell = as_numbers(req(gj, "ell", "bound grid"), "bound grid ell");
          for (double l : grid.ell) require(l >= 0.0, ErrorCode::Configuration, "bound grid: ell must be >= 0");
        } else {
          require(!gj.contains("ell"), ErrorCode::Configuration, "bound grid: ell applies to T2 only");
        }
        if (const Json* v = opt(gj, "trials")) grid.trials = as_count(*v, "bound grid trials");
        require(grid.trials >= 1, ErrorCode::Configuration, "bound grid: trials must be >= 1");
        if (grid.theorem == Theorem::T1)
          require(!sc.sampling, ErrorCode::Configuration, "bound grid: T1 needs the Gaussian neighbourhood (sigma2)");
        if (grid.theorem == Theorem::T3)
          require(g.kind == GeneratorKind::RetrainPerturbed || g.kind == GeneratorKind::RetrainBootstrap,
                  ErrorCode::Configuration, "bound grid: T3 needs a retraining generator");
        c.bounds.grids.push_back(std::move(grid));
      }
    }
  }

  c.source = j;
  c.hash = hex64(seeding::fnv1a(j.dump()));
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  return from_json(io::read_json(path), seed_override);
}

// ---------------------------------------------------------------------------------------------
// Pipeline

namespace {

struct CfRecord {
  std::size_t id = 0;
  std::size_t query = 0;
  double slack = 0.0;
  FeatureVector x;
  FeatureVector xbar;
  double cost = 0.0;
  double m_xbar = 0.0;
  bool valid = false;
  std::string status;
  std::string method;
};

struct StabilityRecord {
  std::size_t id = 0;
  double R = 0.0;
  double rhat = 0.0;
  bool pass = false;
  double validity = 0.0;
  std::uint64_t seed = 0;
};

std::string member_file(std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "member_%03zu.json", j);
  return buf;
}

class Pipeline {
 public:
  Pipeline(const ExperimentConfig& cfg, const RunOptions& opts)
      : cfg_(cfg), opts_(opts), problem_(BoundedProblem::logistic(cfg.data.bound, cfg.data.source->marginal.dim())) {}

  RunResult run() {
    for (Stage s : kAllStages) {
      manifest_.outputs[to_string(s)] = outputs_of(s);
      if (opts_.only && s > *opts_.only) continue;
      const bool compute = !opts_.only || s == *opts_.only || (opts_.compute_missing_upstream && !artifacts_present(s));
      const auto start = std::chrono::steady_clock::now();
      try {
        if (compute)
          this->compute(s);
        else
          load(s);
      } catch (const Error& e) {
        throw Error(e.code(), std::string("stage '") + to_string(s) + "': " + e.what());
      }
      if (compute)
        manifest_.seconds[to_string(s)] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    manifest_.config_hash = cfg_.hash;
    manifest_.seed = cfg_.seed;
    Json mj{{"config_hash", cfg_.hash}, {"seed", cfg_.seed}, {"tool_version", manifest_.tool_version},
            {"outputs", manifest_.outputs}, {"config", cfg_.source}};
    io::write_json(opts_.out / "manifest.json", mj);
    Json tj{{"config_hash", cfg_.hash}, {"seconds", manifest_.seconds}};
    io::write_json(opts_.out / "timings.json", tj);
    result_.manifest = manifest_;
    return result_;
  }

 private:
  // -- helpers ------------------------------------------------------------------------------

  std::uint64_t seed_for(const char* label, std::uint64_t index = 0) const {
    return seeding::derive(cfg_.seed, label, index);
  }

  std::string header() const { return "config_hash=" + cfg_.hash + " seed=" + std::to_string(cfg_.seed); }

  void save(io::Csv csv, const std::string& name) const {
    csv.comment(header());
    csv.save(opts_.out / name);
  }

  void save(Json j, const std::string& name) const {
    j["config_hash"] = cfg_.hash;
    j["seed"] = cfg_.seed;
    io::write_json(opts_.out / name, j);
  }

  fs::path need(Stage s, const std::string& name) const {
    const fs::path path = opts_.out / name;
    if (!fs::exists(path))
      fail(ErrorCode::Dependency, std::string("missing output of stage '") + to_string(s) + "': " + path.string());
    return path;
  }

  io::CsvTable load_csv(Stage s, const std::string& name) const {
    io::CsvTable t = io::read_csv(need(s, name));
    require(!t.comments.empty() && t.comments.front() == header(), ErrorCode::Dependency,
            name + " was produced by a different config or seed");
    return t;
  }

  Json load_json(Stage s, const std::string& name) const {
    Json j = io::read_json(need(s, name));
    require(j.value("config_hash", "") == cfg_.hash && j.value("seed", std::uint64_t{0}) == cfg_.seed,
            ErrorCode::Dependency, name + " was produced by a different config or seed");
    return j;
  }

  bool retraining() const {
    const auto k = cfg_.perturb.generator.kind;
    return k == GeneratorKind::RetrainPerturbed || k == GeneratorKind::RetrainBootstrap;
  }

  std::vector<std::string> outputs_of(Stage s) const {
    switch (s) {
      case Stage::Synthesize: return {"dataset.csv"};
      case Stage::Train: return {"model.json", "trace.csv"};
      case Stage::Ensemble: {
        std::vector<std::string> out{"ensemble/manifest.json"};
        for (std::size_t j = 0; j < cfg_.perturb.members; ++j) out.push_back("ensemble/" + member_file(j));
        if (retraining()) out.push_back("divergence.csv");
        return out;
      }
      case Stage::Profile:
        if (retraining()) return {"profile.json", "theorem3.csv"};
        return {"profile.json"};
      case Stage::Counterfactuals: return {"counterfactuals.csv"};
      case Stage::Stability: return {"stability.csv", "stability.json", "stability_summary.json"};
      case Stage::Bounds: return {"bounds.csv", "bounds_meta.json"};
    }
    return {};
  }

  bool artifacts_present(Stage s) const {
    for (const auto& f : outputs_of(s))
      if (!fs::exists(opts_.out / f)) return false;
    return true;
  }

  void compute(Stage s) {
    switch (s) {
      case Stage::Synthesize: return synthesize();
      case Stage::Train: return train();
      case Stage::Ensemble: return ensemble();
      case Stage::Profile: return profile();
      case Stage::Counterfactuals: return counterfactuals();
      case Stage::Stability: return stability();
      case Stage::Bounds: return bounds();
    }
  }

  void load(Stage s) {
    switch (s) {
      case Stage::Synthesize: return load_dataset();
      case Stage::Train: return load_model();
      case Stage::Ensemble: return load_ensemble();
      case Stage::Profile: return load_profile();
      case Stage::Counterfactuals: return load_counterfactuals();
      case Stage::Stability:
      case Stage::Bounds: return;  // nothing downstream reads these
    }
  }

  std::size_t dim() const { return cfg_.data.source->marginal.dim(); }

  // -- synthesize ---------------------------------------------------------------------------

  void synthesize() {
    data_ = synthesize_dataset(*cfg_.data.source, cfg_.data.n, cfg_.data.bound, seed_for("synthesize"));
    save(io::dataset_csv(data_), "dataset.csv");
  }

  void load_dataset() {
    const io::CsvTable t = load_csv(Stage::Synthesize, "dataset.csv");
    data_.clear();
    const std::size_t yc = t.column("y");
    for (const auto& r : t.rows) {
      LabeledExample z;
      for (std::size_t i = 0; i < dim(); ++i) z.x.push_back(io::parse_double(r[t.column("x" + std::to_string(i))]));
      z.y = int(io::parse_double(r[yc]));
      data_.push_back(std::move(z));
    }
    require(data_.size() == cfg_.data.n, ErrorCode::Dependency, "dataset.csv has the wrong number of rows");
  }

  // -- train --------------------------------------------------------------------------------

  void train() {
    TrainOptions to;
    to.unsafe = cfg_.train.unsafe;
    const TrainingTrace trace = gd_train(problem_, data_, cfg_.train.step_sizes, cfg_.train.theta0, to);
    model_ = trace.model();
    save(Json{{"model", io::model_to_json(*model_)}}, "model.json");
    save(io::trace_csv(trace), "trace.csv");
  }

  void load_model() { model_ = io::model_from_json(load_json(Stage::Train, "model.json").at("model")); }

  // -- ensemble -----------------------------------------------------------------------------

  RetrainSetup retrain_setup() const {
    return RetrainSetup{problem_, data_, cfg_.train.step_sizes, cfg_.train.theta0, cfg_.data.source};
  }

  void ensemble() {
    const std::uint64_t seed = seed_for("ensemble");
    if (retraining())
      ens_ = generate_ensemble(cfg_.perturb.generator, retrain_setup(), cfg_.perturb.members, seed);
    else
      ens_ = generate_ensemble(cfg_.perturb.generator, *model_, cfg_.perturb.members, seed);

    Json members = Json::array();
    for (std::size_t j = 0; j < ens_->members.size(); ++j) {
      Json entry{{"file", member_file(j)}};
      if (retraining()) {
        entry["differing"] = ens_->differing[j];
        Json replaced = Json::array();
        for (std::size_t t : ens_->differing[j])
          replaced.push_back({{"t", t}, {"x", ens_->member_data[j][t].x}, {"y", ens_->member_data[j][t].y}});
        entry["replaced"] = replaced;
      }
      members.push_back(entry);
      save(Json{{"model", io::model_to_json(ens_->members[j])}}, "ensemble/" + member_file(j));
    }
    const GeneratorConfig& g = cfg_.perturb.generator;
    Json gen{{"kind", to_string(g.kind)}, {"r", g.r},       {"positions", g.positions},
             {"radius", g.radius},        {"shift", g.shift}, {"noise", g.noise}};
    save(Json{{"generator", gen}, {"ensemble_seed", seed}, {"members", members}}, "ensemble/manifest.json");

    if (retraining()) write_divergence();
  }

  void write_divergence() {
    std::optional<std::vector<std::size_t>> declared;
    if (cfg_.perturb.generator.kind == GeneratorKind::RetrainPerturbed)
      declared = cfg_.perturb.generator.positions.empty() ? tail_positions(cfg_.data.n, cfg_.perturb.generator.r)
                                                          : cfg_.perturb.generator.positions;
    io::Csv csv({"member", "t", "delta_t", "bound_prefix"});
    for (std::size_t j = 0; j < ens_->members.size(); ++j) {
      const JointTrace jt = joint_divergence_trace(problem_, data_, ens_->member_data[j], cfg_.train.step_sizes,
                                                   cfg_.train.theta0, declared);
      for (std::size_t t = 0; t < jt.deltas.size(); ++t)
        csv.row().add(j).add(t + 1).add(jt.deltas[t]).add(jt.bound_prefix[t]);
      final_deltas_.push_back(jt.deltas.back());
    }
    save(csv, "divergence.csv");
  }

  void load_ensemble() {
    const Json man = load_json(Stage::Ensemble, "ensemble/manifest.json");
    ModelChangeEnsemble ens{*model_, {}, cfg_.perturb.generator, man.at("ensemble_seed").get<std::uint64_t>(), {}, {}, {}, {}};
    if (retraining()) {
      ens.loss_constants = problem_.constants();
      ens.step_sizes = cfg_.train.step_sizes;
    }
    for (const auto& entry : man.at("members")) {
      const std::string file = entry.at("file").get<std::string>();
      ens.members.push_back(io::model_from_json(load_json(Stage::Ensemble, "ensemble/" + file).at("model")));
      if (retraining()) {
        ens.differing.push_back(entry.at("differing").get<std::vector<std::size_t>>());
        std::vector<LabeledExample> d = data_;
        for (const auto& r : entry.at("replaced"))
          d.at(r.at("t").get<std::size_t>()) = {r.at("x").get<Vector>(), r.at("y").get<int>()};
        ens.member_data.push_back(std::move(d));
      }
    }
    require(ens.members.size() == cfg_.perturb.members, ErrorCode::Dependency, "ensemble manifest has the wrong size");
    ens_ = std::move(ens);
    if (retraining()) {
      const io::CsvTable t = load_csv(Stage::Ensemble, "divergence.csv");
      final_deltas_.assign(ens_->members.size(), 0.0);
      const std::size_t mc = t.column("member"), dc = t.column("delta_t");
      for (const auto& r : t.rows) final_deltas_.at(std::size_t(io::parse_double(r[mc]))) = io::parse_double(r[dc]);
    }
  }

  // -- profile ------------------------------------------------------------------------------

  void profile() {
    prof_ = estimate_profile(*ens_, cfg_.data.source->marginal, cfg_.profile, seed_for("profile"));
    const NomcReport& n = prof_->nomc;
    Json nomc{{"max_mean_deviation", n.max_mean_deviation}, {"max_variance", n.max_variance},
              {"mean_zero_pass", n.mean_zero_pass},         {"lipschitz_ok", n.lipschitz_ok},
              {"low_power", n.low_power},                   {"points_tested", n.points_tested},
              {"points_skipped", n.points_skipped},         {"points_rejected", n.points_rejected}};
    Json j{{"delta", prof_->delta.value},
           {"delta_stderr", prof_->delta.std_error},
           {"distances", prof_->distances},
           {"distance_stderrs", prof_->distance_errors},
           {"nu", prof_->nu},
           {"nu_fallback", prof_->nu_fallback},
           {"gamma", prof_->gamma.value},
           {"gamma_is_estimate", prof_->gamma.estimate},
           {"gamma_m", prof_->gamma_m},
           {"regime", to_string(prof_->regime)},
           {"nomc", nomc}};
    save(j, "profile.json");

    if (retraining()) {
      const LossConstants lc = problem_.constants();
      io::Csv csv({"member", "differing_steps", "delta_final", "parameter_bound", "l2_distance", "l2_stderr",
                   "output_bound", "parameter_holds", "output_holds"});
      for (std::size_t j = 0; j < ens_->members.size(); ++j) {
        const double pb = theorem3_parameter_bound(lc, cfg_.train.step_sizes, ens_->differing[j]);
        const double ob = theorem3_bound_delta(lc, cfg_.train.step_sizes, ens_->differing[j]);
        csv.row()
            .add(j)
            .add(ens_->differing[j].size())
            .add(final_deltas_[j])
            .add(pb)
            .add(prof_->distances[j])
            .add(prof_->distance_errors[j])
            .add(ob)
            .add(final_deltas_[j] <= pb + 1e-12)
            .add(prof_->distances[j] <= ob + 3.0 * prof_->distance_errors[j]);
      }
      save(csv, "theorem3.csv");
    }
  }

  void load_profile() {
    const Json j = load_json(Stage::Profile, "profile.json");
    ModelChangeProfile p;
    p.delta = {j.at("delta").get<double>(), j.at("delta_stderr").get<double>()};
    p.distances = j.at("distances").get<Vector>();
    p.distance_errors = j.at("distance_stderrs").get<Vector>();
    p.nu = j.at("nu").get<double>();
    p.gamma = {j.at("gamma").get<double>(), j.at("gamma_is_estimate").get<bool>()};
    p.gamma_m = j.at("gamma_m").get<double>();
    const std::string regime = j.at("regime").get<std::string>();
    p.regime = regime == to_string(Regime::NomcConsistent) ? Regime::NomcConsistent
               : regime == to_string(Regime::GomcOnly)     ? Regime::GomcOnly
                                                           : Regime::Neither;
    prof_ = std::move(p);
  }

  // -- counterfactuals ----------------------------------------------------------------------

  std::vector<FeatureVector> queries() const {
    const CounterfactualSpec& s = cfg_.counterfactuals;
    std::vector<FeatureVector> qs = s.points;
    if (s.sample_negatives > 0) {
      Rng rng = make_rng(seed_for("cf-queries"));
      std::size_t found = 0;
      for (std::size_t attempt = 0; found < s.sample_negatives; ++attempt) {
        require(attempt < 1000 * s.sample_negatives, ErrorCode::Configuration,
                "counterfactuals: too few points with m(x) < 0.5 under the data marginal");
        FeatureVector x = cfg_.data.source->marginal.draw(rng);
        if (model_->predict(x) < kDecisionThreshold) {
          qs.push_back(std::move(x));
          ++found;
        }
      }
    }
    return qs;
  }

  void counterfactuals() {
    const CounterfactualSpec& s = cfg_.counterfactuals;
    const auto qs = queries();
    std::vector<FeatureVector> manifold;
    if (s.mode == CounterfactualMode::Manifold)
      for (const auto& z : data_) manifold.push_back(z.x);

    cfs_.assign(qs.size() * s.slacks.size(), {});
    parallel::for_each_index(cfs_.size(), [&](std::size_t id) {
      CfRecord& rec = cfs_[id];
      rec.id = id;
      rec.query = id / s.slacks.size();
      rec.slack = s.slacks[id % s.slacks.size()];
      rec.x = qs[rec.query];
      CounterfactualQuery q{rec.x, s.norm, s.mode, manifold, rec.slack};
      try {
        const CounterfactualResult r = find_counterfactual(*model_, q);
        rec.xbar = r.xbar;
        rec.cost = r.cost;
        rec.m_xbar = model_->predict(r.xbar);
        rec.valid = r.valid;
        rec.status = "ok";
        rec.method = r.method;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Infeasible && e.code() != ErrorCode::Precondition) throw;
        rec.xbar.assign(dim(), std::nan(""));
        rec.cost = rec.m_xbar = std::nan("");
        rec.status = e.code() == ErrorCode::Infeasible ? "infeasible" : "already-positive";
        rec.method = "none";
      }
    });

    std::vector<std::string> cols{"id", "query", "slack"};
    for (std::size_t i = 0; i < dim(); ++i) cols.push_back("x" + std::to_string(i));
    for (std::size_t i = 0; i < dim(); ++i) cols.push_back("xbar" + std::to_string(i));
    for (const char* c : {"cost", "m_xbar", "valid", "status", "method"}) cols.push_back(c);
    io::Csv csv(cols);
    for (const auto& r : cfs_)
      csv.row()
          .add(r.id)
          .add(r.query)
          .add(r.slack)
          .add(std::span<const double>(r.x))
          .add(std::span<const double>(r.xbar))
          .add(r.cost)
          .add(r.m_xbar)
          .add(r.valid)
          .add(r.status)
          .add(r.method);
    save(csv, "counterfactuals.csv");
  }

  void load_counterfactuals() {
    const io::CsvTable t = load_csv(Stage::Counterfactuals, "counterfactuals.csv");
    cfs_.clear();
    for (const auto& row : t.rows) {
      CfRecord r;
      r.id = std::size_t(io::parse_double(row[t.column("id")]));
      r.query = std::size_t(io::parse_double(row[t.column("query")]));
      r.slack = io::parse_double(row[t.column("slack")]);
      for (std::size_t i = 0; i < dim(); ++i) {
        r.x.push_back(io::parse_double(row[t.column("x" + std::to_string(i))]));
        r.xbar.push_back(io::parse_double(row[t.column("xbar" + std::to_string(i))]));
      }
      r.cost = io::parse_double(row[t.column("cost")]);
      r.m_xbar = io::parse_double(row[t.column("m_xbar")]);
      r.valid = row[t.column("valid")] == "1";
      r.status = row[t.column("status")];
      r.method = row[t.column("method")];
      cfs_.push_back(std::move(r));
    }
  }

  // -- stability ----------------------------------------------------------------------------

  void stability() {
    std::vector<const CfRecord*> ok;
    for (const auto& r : cfs_)
      if (r.status == "ok") ok.push_back(&r);
    std::vector<StabilityRecord> recs(ok.size());
    std::vector<Json> reports(ok.size());
    const double gamma = prof_->gamma.value;
    parallel::for_each_index(ok.size(), [&](std::size_t i) {
      const CfRecord& cf = *ok[i];
      StabilityConfig sc = cfg_.stability.config;
      sc.seed = seed_for("stability", cf.id);
      const StabilityReport rep = evaluate_stability(*model_, cf.xbar, sc, gamma);
      std::size_t valid = 0;
      for (const Model& M : ens_->members) valid += M.predict(cf.xbar) >= kDecisionThreshold;
      recs[i] = {cf.id, *rep.R, rep.rhat, rep.pass, double(valid) / double(ens_->members.size()), sc.seed};
      Json jr{{"id", cf.id}, {"x", cf.xbar}, {"k", sc.k}, {"R", *rep.R}, {"Rhat", rep.rhat}, {"tau", sc.tau},
              {"pass", rep.pass}, {"seed", sc.seed}, {"validity_rate", recs[i].validity}};
      if (sc.sampling)
        jr["sampling"] = io::distribution_to_json(*sc.sampling);
      else
        jr["sigma2"] = sc.sigma2;
      reports[i] = std::move(jr);
    });

    io::Csv csv({"id", "k", "sigma2", "tau", "gamma", "R", "Rhat", "pass", "validity_rate", "seed"});
    const auto& sc = cfg_.stability.config;
    for (const auto& r : recs) {
      csv.row().add(r.id).add(sc.k);
      if (sc.sampling)
        csv.add("");
      else
        csv.add(sc.sigma2);
      csv.add(sc.tau).add(gamma).add(r.R).add(r.rhat).add(r.pass).add(r.validity).add(std::to_string(r.seed));
    }
    save(csv, "stability.csv");
    save(Json{{"reports", reports}}, "stability.json");

    auto cohort = [&](double tau, bool above) {
      std::size_t n = 0;
      double acc = 0.0;
      for (const auto& r : recs)
        if ((r.rhat >= tau) == above) {
          ++n;
          acc += r.validity;
        }
      return Json{{"size", n}, {"validity_rate", n ? Json(acc / double(n)) : Json(nullptr)}};
    };
    Json grid = Json::array();
    for (double tau : cfg_.stability.tau_grid) grid.push_back({{"tau", tau}, {"passing", cohort(tau, true)}});
    save(Json{{"tau", sc.tau}, {"passing", cohort(sc.tau, true)}, {"failing", cohort(sc.tau, false)}, {"tau_grid", grid}},
         "stability_summary.json");
  }

  // -- bounds -------------------------------------------------------------------------------

  void bounds() {
    const BoundsSpec& b = cfg_.bounds;
    FeatureVector x;
    if (b.point) {
      x = *b.point;
    } else {
      for (const auto& r : cfs_)
        if (r.status == "ok" && r.valid) {
          x = r.xbar;
          break;
        }
      require(!x.empty(), ErrorCode::Dependency, "no valid counterfactual to centre the neighbourhood; set bounds.point");
    }

    const StabilityConfig& sc = cfg_.stability.config;
    const Distribution mu_tilde = sc.neighbourhood(x);
    std::optional<double> kappa_value;
    Json kappa_json{{"value", nullptr}, {"stderr", nullptr}, {"status", "ok"}};
    try {
      const KappaEstimate ke = kappa(mu_tilde, cfg_.data.source->marginal, b.kappa_mc, seed_for("kappa"));
      kappa_json["value"] = ke.value;
      kappa_json["stderr"] = ke.std_error;
      if (ke.reliable)
        kappa_value = ke.value;
      else
        kappa_json["status"] = "unreliable: " + ke.warning;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AbsoluteContinuity) throw;
      kappa_json["status"] = std::string("unavailable: ") + e.what();
    }

    const bool have_gamma = prof_->regime != Regime::Neither;
    double epsilon_prime = std::nan("");
    if (sc.gaussian()) epsilon_prime = estimate_epsilon_prime(*ens_, x, sc, b.kappa_mc, seed_for("epsilon-prime"));

    io::Csv csv({"theorem", "k", "epsilon", "ell", "rhs", "freq", "ci_lo", "ci_hi", "violated", "trials", "seed",
                 "status"});
    for (std::size_t gi = 0; gi < b.grids.size(); ++gi) {
      const BoundGrid& g = b.grids[gi];
      const Vector ells = g.theorem == Theorem::T2 ? g.ell : Vector{std::nan("")};
      for (std::size_t ki = 0; ki < g.k.size(); ++ki)
        for (std::size_t ei = 0; ei < g.epsilon.size(); ++ei)
          for (std::size_t li = 0; li < ells.size(); ++li) {
            BoundQuery q;
            q.theorem = g.theorem;
            q.k = g.k[ki];
            q.epsilon = g.epsilon[ei];
            if (g.theorem == Theorem::T2) q.ell = ells[li];
            if (have_gamma) q.gamma = prof_->gamma.value;
            q.gamma_m = prof_->gamma_m;
            q.sigma2 = sc.sigma2;
            q.delta = prof_->delta.value;
            q.nu = prof_->nu;
            q.kappa = kappa_value;
            if (g.theorem == Theorem::T3) {
              q.loss = problem_.constants();
              q.step_sizes = cfg_.train.step_sizes;
              std::set<std::size_t> all;
              for (const auto& d : ens_->differing) all.insert(d.begin(), d.end());
              q.differing.assign(all.begin(), all.end());
            }
            const std::uint64_t seed =
                seeding::derive(seeding::derive(seed_for("bounds", gi), "cell", ki), "eps-ell", ei * 1024 + li);

            VerificationReport rep;
            rep.trials = g.trials;
            std::string skip;
            if (!have_gamma)
              skip = "skipped: no Lipschitz bound for the ensemble";
            else if (g.theorem == Theorem::T1 && prof_->regime != Regime::NomcConsistent)
              skip = "skipped: ensemble not NOMC-consistent";
            if (skip.empty()) {
              rep = lhs_event_frequency(*ens_, x, sc, q, g.trials, seed);
            } else {
              rep.skipped = true;
              rep.status = skip;
            }
            const bool outside_premise = g.theorem == Theorem::T1 && !rep.skipped && !std::isnan(epsilon_prime) &&
                                         q.epsilon <= 2.0 * epsilon_prime;
            if (outside_premise) rep.status = "outside-premise";
            if (rep.skipped) {
              ++result_.bound_skipped;
            } else if (outside_premise) {
              ++result_.bound_outside_premise;
            } else {
              ++result_.bound_rows;
              result_.bound_vacuous += rep.vacuous;
              result_.bound_violations += rep.violated;
            }
            csv.row().add(to_string(g.theorem)).add(q.k).add(q.epsilon);
            if (g.theorem == Theorem::T2)
              csv.add(*q.ell);
            else
              csv.add("");
            if (rep.skipped) {
              csv.add("").add("").add("").add("").add("");
            } else {
              csv.add(rep.rhs).add(rep.frequency).add(rep.ci.lo).add(rep.ci.hi).add(rep.violated);
            }
            csv.add(g.trials).add(std::to_string(seed)).add(rep.status);
          }
    }
    save(csv, "bounds.csv");

    Json meta{{"point", x},
              {"kappa", kappa_json},
              {"gamma", have_gamma ? Json(prof_->gamma.value) : Json(nullptr)},
              {"gamma_m", prof_->gamma_m},
              {"delta", prof_->delta.value},
              {"nu", prof_->nu},
              {"regime", to_string(prof_->regime)},
              {"epsilon_prime_estimate", std::isnan(epsilon_prime) ? Json(nullptr) : Json(epsilon_prime)},
              {"rows", result_.bound_rows},
              {"violations", result_.bound_violations},
              {"vacuous", result_.bound_vacuous},
              {"skipped", result_.bound_skipped},
              {"outside_premise", result_.bound_outside_premise}};
    save(meta, "bounds_meta.json");
  }

  const ExperimentConfig& cfg_;
  const RunOptions& opts_;
  BoundedProblem problem_;
  RunManifest manifest_;
  RunResult result_;

  std::vector<LabeledExample> data_;
  std::optional<Model> model_;
  std::optional<ModelChangeEnsemble> ens_;
  Vector final_deltas_;
  std::optional<ModelChangeProfile> prof_;
  std::vector<CfRecord> cfs_;
};

}  // namespace

RunResult run_pipeline(const ExperimentConfig& config, const RunOptions& opts) {
  require(config.data.source.has_value(), ErrorCode::Configuration, "config: data source missing");
  fs::create_directories(opts.out);
  return Pipeline(config, opts).run();
}

// ---------------------------------------------------------------------------------------------
// Plot data

fs::path emit_plot_data(const fs::path& out, PlotFigure figure) {
  const fs::path mpath = out / "manifest.json";
  require(fs::exists(mpath), ErrorCode::Dependency, "no run manifest in '" + out.string() + "'");
  const Json man = io::read_json(mpath);
  const std::string head =
      "config_hash=" + man.at("config_hash").get<std::string>() + " seed=" + std::to_string(man.at("seed").get<std::uint64_t>());

  auto stage_file = [&](const char* stage, const char* file) {
    const fs::path p = out / file;
    if (!fs::exists(p)) fail(ErrorCode::Dependency, std::string("stage '") + stage + "' output missing: " + p.string());
    return io::read_csv(p);
  };

  io::Csv csv({});
  switch (figure) {
    case PlotFigure::BoundCurves: {
      const io::CsvTable t = stage_file("bounds", "bounds.csv");
      csv = io::Csv({"theorem", "k", "epsilon", "ell", "rhs", "freq"});
      for (const auto& r : t.rows) {
        if (r[t.column("freq")].empty()) continue;
        csv.row();
        for (const char* c : {"theorem", "k", "epsilon", "ell", "rhs", "freq"}) csv.add(r[t.column(c)]);
      }
      break;
    }
    case PlotFigure::ValidityVsTau: {
      const io::CsvTable t = stage_file("stability", "stability.csv");
      const Json summary = io::read_json(out / "stability_summary.json");
      Vector taus;
      for (const auto& e : summary.at("tau_grid")) taus.push_back(e.at("tau").get<double>());
      if (taus.empty()) taus.push_back(summary.at("tau").get<double>());
      csv = io::Csv({"tau", "cohort_size", "validity_rate"});
      for (double tau : taus) {
        std::size_t n = 0;
        double acc = 0.0;
        for (const auto& r : t.rows)
          if (io::parse_double(r[t.column("Rhat")]) >= tau) {
            ++n;
            acc += io::parse_double(r[t.column("validity_rate")]);
          }
        csv.row().add(tau).add(n);
        if (n)
          csv.add(acc / double(n));
        else
          csv.add("");
      }
      break;
    }
    case PlotFigure::DivergenceTrace: {
      const io::CsvTable t = stage_file("ensemble", "divergence.csv");
      csv = io::Csv({"member", "t", "delta_t", "analytic_bound_prefix"});
      for (const auto& r : t.rows)
        csv.row().add(r[t.column("member")]).add(r[t.column("t")]).add(r[t.column("delta_t")]).add(r[t.column("bound_prefix")]);
      break;
    }
  }
  csv.comment(head);
  const fs::path path = out / (std::string("plot_") + to_string(figure) + ".csv");
  csv.save(path);
  return path;
}

}  // namespace cfr
