#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cfr/bounds.hpp"
#include "cfr/counterfactual.hpp"
#include "cfr/io.hpp"
#include "cfr/modelchange.hpp"
#include "cfr/stability.hpp"
#include "cfr/training.hpp"

namespace cfr {

inline constexpr const char* kToolVersion = "cfrobust 1.0.0";
inline constexpr int kSchemaVersion = 1;

struct DataSpec {
  std::optional<LabeledDistribution> source;  // always set after parsing
  std::size_t n = 0;
  double bound = 1.0;
};

struct TrainSpec {
  Vector step_sizes;
  Vector theta0;
  bool unsafe = false;
};

struct PerturbSpec {
  GeneratorConfig generator;
  std::size_t members = 0;
};

struct CounterfactualSpec {
  Norm norm = Norm::L2;
  CounterfactualMode mode = CounterfactualMode::Free;
  Vector slacks{0.0};
  std::vector<FeatureVector> points;
  /// Draw this many query points from the data marginal among those with m(x) < 0.5.
  std::size_t sample_negatives = 0;
};

struct StabilitySpec {
  StabilityConfig config;
  Vector tau_grid;
};

struct BoundGrid {
  Theorem theorem = Theorem::T2;
  std::vector<std::size_t> k;
  Vector epsilon;
  Vector ell;
  std::size_t trials = 10000;
};

struct BoundsSpec {
  /// Centre of the neighbourhood; defaults to the first valid counterfactual.
  std::optional<FeatureVector> point;
  std::size_t kappa_mc = 100000;
  std::vector<BoundGrid> grids;
};

/// Parsed and validated experiment configuration (JSON, schema version 1).
struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataSpec data;
  TrainSpec train;
  PerturbSpec perturb;
  ProfileOptions profile;
  CounterfactualSpec counterfactuals;
  StabilitySpec stability;
  BoundsSpec bounds;
  io::Json source;   // canonical form, seed override applied
  std::string hash;  // FNV-1a of source.dump(), 16 hex digits

  /// Validates everything up front; unknown keys are errors.
  static ExperimentConfig from_json(const io::Json& j, std::optional<std::uint64_t> seed_override = std::nullopt);
  static ExperimentConfig load(const std::filesystem::path& path,
                               std::optional<std::uint64_t> seed_override = std::nullopt);
};

enum class Stage { Synthesize, Train, Ensemble, Profile, Counterfactuals, Stability, Bounds };

inline constexpr Stage kAllStages[] = {Stage::Synthesize,      Stage::Train,     Stage::Ensemble, Stage::Profile,
                                       Stage::Counterfactuals, Stage::Stability, Stage::Bounds};

const char* to_string(Stage s) noexcept;
Stage parse_stage(const std::string& s);

struct RunManifest {
  std::string config_hash;
  std::string tool_version = kToolVersion;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<std::string>> outputs;  // stage -> relative paths
  std::map<std::string, double> seconds;                    // written to timings.json only
};

struct RunOptions {
  std::filesystem::path out = "out";
  /// Run only this stage; upstream stages are loaded from `out`.
  std::optional<Stage> only;
  /// With `only`: compute upstream stages whose artifacts are missing instead of failing.
  bool compute_missing_upstream = false;
};

struct RunResult {
  RunManifest manifest;
  std::size_t bound_rows = 0;
  std::size_t bound_violations = 0;
  std::size_t bound_vacuous = 0;
  std::size_t bound_skipped = 0;
  /// T1 rows with epsilon <= 2 * (estimated epsilon'): the theorem's premise fails, so they are
  /// reported but not counted as violations.
  std::size_t bound_outside_premise = 0;
};

/// Stages in order: synthesize, train, ensemble, profile, counterfactuals, stability, bounds.
/// Every artifact carries the config hash and seed. Stage errors are rethrown with the stage name.
RunResult run_pipeline(const ExperimentConfig& config, const RunOptions& opts);

enum class PlotFigure { BoundCurves, ValidityVsTau, DivergenceTrace };
PlotFigure parse_figure(const std::string& s);
const char* to_string(PlotFigure f) noexcept;

/// Long-format CSV for one figure, built from the run in `out`. Returns the written path.
std::filesystem::path emit_plot_data(const std::filesystem::path& out, PlotFigure figure);

}  // namespace cfr
