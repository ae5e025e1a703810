#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfr/counterfactual.hpp"
#include "cfr/distributions.hpp"
#include "cfr/models.hpp"
#include "cfr/training.hpp"

namespace cfr::io {

using Json = nlohmann::json;

/// %.17g: parses back to the identical double.
std::string format_double(double v);

// Models: {kind, dim, theta, bias, lipschitz} for linear-sigmoid;
// {kind, dim, lower, upper, shape, values, lipschitz} for tabulated;
// {kind: "output-shift", dim, offset, base} for output shifts. Other wrapped models throw.
Json model_to_json(const Model& model);
Model model_from_json(const Json& j);

// Distributions: {kind, dim, mean, sigma2 | components | bounds}.
Json distribution_to_json(const Distribution& dist);
Distribution distribution_from_json(const Json& j);

Vector vector_from_json(const Json& j, const char* what);
/// Throws Configuration if `j` is not an object or has a key outside `allowed`.
void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& what);

/// Writes `content` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

/// CSV builder. Header comment lines come first, then the column row, then data rows.
class Csv {
 public:
  explicit Csv(std::vector<std::string> columns);

  void comment(const std::string& line);
  Csv& row();
  Csv& add(double v);
  Csv& add(std::size_t v);
  Csv& add(int v);
  Csv& add(bool v);
  Csv& add(const std::string& v);
  Csv& add(const char* v) { return add(std::string(v)); }
  Csv& add(std::span<const double> values);

  std::string str() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> columns_;
  std::vector<std::string> comments_;
  std::vector<std::vector<std::string>> rows_;
};

struct CsvTable {
  std::vector<std::string> comments;  // without the leading "# "
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  /// Index of a named column; throws Input when absent.
  std::size_t column(const std::string& name) const;
};

/// Reads a file written by Csv: comment lines, one column row, then data rows.
CsvTable read_csv(const std::filesystem::path& path);
/// Parses a cell written by Csv; throws Input on malformed numbers.
double parse_double(const std::string& cell);

/// Numeric rows of a CSV file; '#' lines and one non-numeric header row are skipped.
std::vector<Vector> read_numeric_csv(const std::filesystem::path& path);

/// Columns x0..x{d-1}, y.
Csv dataset_csv(std::span<const LabeledExample> data);
/// Columns t, eta_t, example_index, theta0..theta{d-1}.
Csv trace_csv(const TrainingTrace& trace);

}  // namespace cfr::io
