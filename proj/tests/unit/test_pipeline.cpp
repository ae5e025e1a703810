#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cfr/pipeline.hpp"

using namespace cfr;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(CFR_SOURCE_DIR) / "configs";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cfr_unit_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Every file under `root` except timings.json, relative path -> contents.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "timings.json") continue;
    files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

}  // namespace

TEST_CASE("config validation") {
  const io::Json base = io::read_json(kConfigs / "minimal.json");
  CHECK_NOTHROW(ExperimentConfig::from_json(base));

  io::Json r_too_big = base;
  r_too_big["perturb"]["r"] = 51;
  try {
    ExperimentConfig::from_json(r_too_big);
    FAIL("expected a configuration error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Configuration);
  }

  io::Json unknown = base;
  unknown["stability"]["sigma"] = 1.0;
  CHECK_THROWS_AS(ExperimentConfig::from_json(unknown), Error);
  io::Json top = base;
  top["extra"] = true;
  CHECK_THROWS_AS(ExperimentConfig::from_json(top), Error);

  io::Json big_step = base;
  big_step["train"]["eta"] = 9.0;
  CHECK_THROWS_AS(ExperimentConfig::from_json(big_step), Error);

  const ExperimentConfig a = ExperimentConfig::from_json(base);
  const ExperimentConfig b = ExperimentConfig::from_json(base, 12);
  CHECK(a.hash.size() == 16);
  CHECK(a.hash != b.hash);
  CHECK(b.seed == 12);
  CHECK(parse_stage("bounds") == Stage::Bounds);
  CHECK_THROWS_AS(parse_stage("plot"), Error);
}

TEST_CASE("minimal run, determinism, resume and plot data") {
  const ExperimentConfig cfg = ExperimentConfig::load(kConfigs / "minimal.json");
  const fs::path out1 = scratch("run1"), out2 = scratch("run2");

  CHECK_THROWS_AS(emit_plot_data(out1, PlotFigure::BoundCurves), Error);

  RunOptions o1;
  o1.out = out1;
  const RunResult r = run_pipeline(cfg, o1);
  CHECK(r.bound_rows == 1);
  CHECK(r.bound_violations == 0);
  for (const char* f : {"dataset.csv", "model.json", "trace.csv", "ensemble/manifest.json", "divergence.csv",
                        "profile.json", "counterfactuals.csv", "stability.csv", "bounds.csv", "bounds_meta.json",
                        "manifest.json", "timings.json"})
    CHECK_MESSAGE(fs::exists(out1 / f), f);
  const io::CsvTable bounds = io::read_csv(out1 / "bounds.csv");
  REQUIRE_FALSE(bounds.comments.empty());
  CHECK(bounds.comments[0] == "config_hash=" + cfg.hash + " seed=11");

  RunOptions o2;
  o2.out = out2;
  run_pipeline(cfg, o2);
  CHECK(snapshot(out1) == snapshot(out2));

  // resuming one stage rewrites identical files
  const auto before = snapshot(out1);
  RunOptions resume;
  resume.out = out1;
  resume.only = Stage::Stability;
  run_pipeline(cfg, resume);
  CHECK(snapshot(out1) == before);

  for (PlotFigure f : {PlotFigure::BoundCurves, PlotFigure::ValidityVsTau, PlotFigure::DivergenceTrace}) {
    const fs::path p = emit_plot_data(out1, f);
    CHECK(fs::exists(p));
    CHECK_FALSE(io::read_csv(p).rows.empty());
  }
  const io::CsvTable trace = io::read_csv(emit_plot_data(out1, PlotFigure::DivergenceTrace));
  CHECK_NOTHROW(trace.column("delta_t"));
  CHECK_NOTHROW(trace.column("analytic_bound_prefix"));

  // a resumed stage refuses artifacts from a different config
  RunOptions other;
  other.out = out1;
  other.only = Stage::Bounds;
  CHECK_THROWS_AS(run_pipeline(ExperimentConfig::load(kConfigs / "minimal.json", 99), other), Error);

  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST_CASE("missing upstream stage") {
  const ExperimentConfig cfg = ExperimentConfig::load(kConfigs / "minimal.json");
  const fs::path out = scratch("missing");
  RunOptions o;
  o.out = out;
  o.only = Stage::Bounds;
  try {
    run_pipeline(cfg, o);
    FAIL("expected a dependency error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Dependency);
  }
  o.compute_missing_upstream = true;
  CHECK(run_pipeline(cfg, o).bound_rows == 1);
  fs::remove_all(out);
}
