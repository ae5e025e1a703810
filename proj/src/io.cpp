#include "cfr/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace cfr::io {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& what) {
  require(j.is_object(), ErrorCode::Configuration, what + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* a : allowed) known = known || it.key() == a;
    require(known, ErrorCode::Configuration, what + ": unknown key '" + it.key() + "'");
  }
}

Vector vector_from_json(const Json& j, const char* what) {
  require(j.is_array(), ErrorCode::Configuration, std::string(what) + ": expected an array of numbers");
  Vector v;
  v.reserve(j.size());
  for (const auto& e : j) {
    require(e.is_number(), ErrorCode::Configuration, std::string(what) + ": expected an array of numbers");
    v.push_back(e.get<double>());
  }
  return v;
}

namespace {

const Json& at(const Json& j, const char* key, const std::string& what) {
  require(j.contains(key), ErrorCode::Configuration, what + ": missing key '" + key + "'");
  return j.at(key);
}

std::size_t dim_of(const Json& j, const std::string& what) {
  const Json& d = at(j, "dim", what);
  require(d.is_number_unsigned() && d.get<std::size_t>() >= 1, ErrorCode::Configuration,
          what + ": dim must be a positive integer");
  return d.get<std::size_t>();
}

Vector per_coordinate(const Json& j, std::size_t dim, const char* what) {
  if (j.is_number()) return Vector(dim, j.get<double>());
  Vector v = vector_from_json(j, what);
  require(v.size() == dim, ErrorCode::Configuration, std::string(what) + ": length does not match dim");
  return v;
}

}  // namespace

Json model_to_json(const Model& model) {
  Json j;
  j["dim"] = model.dim();
  if (model.is_output_shift()) {
    j["kind"] = "output-shift";
    j["offset"] = model.shift_offset();
    j["base"] = model_to_json(model.shift_base());
    return j;
  }
  switch (model.kind()) {
    case ModelKind::LinearSigmoid:
      j["kind"] = "linear-sigmoid";
      j["theta"] = model.weights();
      j["bias"] = model.bias();
      break;
    case ModelKind::Tabulated:
      j["kind"] = "tabulated";
      j["lower"] = model.table_box().lower;
      j["upper"] = model.table_box().upper;
      j["shape"] = model.table_shape();
      j["values"] = model.table_values();
      break;
    case ModelKind::Wrapped:
      fail(ErrorCode::Input, "model serialization: wrapped callables cannot be serialized");
  }
  if (auto l = model.declared_lipschitz())
    j["lipschitz"] = *l;
  else
    j["lipschitz"] = nullptr;
  return j;
}

Model model_from_json(const Json& j) {
  const std::string what = "model";
  require(j.is_object(), ErrorCode::Configuration, "model: expected a JSON object");
  const std::string kind = at(j, "kind", what).get<std::string>();
  const std::size_t dim = dim_of(j, what);
  Model m = [&] {
    if (kind == "linear-sigmoid") {
      check_keys(j, {"kind", "dim", "theta", "bias", "lipschitz"}, what);
      Vector w = vector_from_json(at(j, "theta", what), "model theta");
      const double b = j.contains("bias") ? j.at("bias").get<double>() : 0.0;
      return Model::linear_sigmoid(std::move(w), b);
    }
    if (kind == "tabulated") {
      check_keys(j, {"kind", "dim", "lower", "upper", "shape", "values", "lipschitz"}, what);
      Box box{vector_from_json(at(j, "lower", what), "model lower"),
              vector_from_json(at(j, "upper", what), "model upper")};
      auto shape = at(j, "shape", what).get<std::vector<std::size_t>>();
      return Model::tabulated(std::move(box), std::move(shape), vector_from_json(at(j, "values", what), "model values"));
    }
    if (kind == "output-shift") {
      check_keys(j, {"kind", "dim", "offset", "base"}, what);
      return Model::output_shift(model_from_json(at(j, "base", what)), at(j, "offset", what).get<double>());
    }
    fail(ErrorCode::Configuration, "model: unknown kind '" + kind + "'");
  }();
  require(m.dim() == dim, ErrorCode::Configuration, "model: dim does not match the parameters");
  return m;
}

Json distribution_to_json(const Distribution& dist) {
  Json j;
  j["dim"] = dist.dim();
  switch (dist.kind()) {
    case DistributionKind::Gaussian:
      j["kind"] = "gaussian";
      j["mean"] = dist.components()[0].mean;
      j["sigma2"] = dist.components()[0].variance;
      break;
    case DistributionKind::GaussianMixture: {
      j["kind"] = "gaussian-mixture";
      Json comps = Json::array();
      for (std::size_t i = 0; i < dist.components().size(); ++i)
        comps.push_back({{"weight", dist.weights()[i]},
                         {"mean", dist.components()[i].mean},
                         {"sigma2", dist.components()[i].variance}});
      j["components"] = comps;
      break;
    }
    case DistributionKind::UniformBox:
      j["kind"] = "uniform-box";
      j["bounds"] = {{"lower", dist.box().lower}, {"upper", dist.box().upper}};
      break;
  }
  return j;
}

Distribution distribution_from_json(const Json& j) {
  const std::string what = "distribution";
  require(j.is_object(), ErrorCode::Configuration, "distribution: expected a JSON object");
  const std::string kind = at(j, "kind", what).get<std::string>();
  const std::size_t dim = dim_of(j, what);
  if (kind == "gaussian") {
    check_keys(j, {"kind", "dim", "mean", "sigma2"}, what);
    Vector mean = per_coordinate(at(j, "mean", what), dim, "distribution mean");
    return Distribution::gaussian_diag(std::move(mean), per_coordinate(at(j, "sigma2", what), dim, "distribution sigma2"));
  }
  if (kind == "gaussian-mixture") {
    check_keys(j, {"kind", "dim", "components"}, what);
    const Json& comps = at(j, "components", what);
    require(comps.is_array() && !comps.empty(), ErrorCode::Configuration,
            "distribution: components must be a non-empty array");
    Vector weights;
    std::vector<GaussianComponent> out;
    for (const auto& c : comps) {
      check_keys(c, {"weight", "mean", "sigma2"}, "mixture component");
      weights.push_back(at(c, "weight", "mixture component").get<double>());
      out.push_back({per_coordinate(at(c, "mean", "mixture component"), dim, "component mean"),
                     per_coordinate(at(c, "sigma2", "mixture component"), dim, "component sigma2")});
    }
    return Distribution::mixture(std::move(weights), std::move(out));
  }
  if (kind == "uniform-box") {
    check_keys(j, {"kind", "dim", "bounds"}, what);
    const Json& b = at(j, "bounds", what);
    check_keys(b, {"lower", "upper"}, "distribution bounds");
    return Distribution::uniform_box(per_coordinate(at(b, "lower", what), dim, "bounds lower"),
                                     per_coordinate(at(b, "upper", what), dim, "bounds upper"));
  }
  fail(ErrorCode::Configuration, "distribution: unknown kind '" + kind + "'");
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(bool(out), ErrorCode::Input, "cannot open '" + path.string() + "' for writing");
  out << content;
  require(bool(out), ErrorCode::Input, "failed writing '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorCode::Input, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::Configuration, "'" + path.string() + "': " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

Csv::Csv(std::vector<std::string> columns) : columns_(std::move(columns)) {}

void Csv::comment(const std::string& line) { comments_.push_back(line); }

Csv& Csv::row() {
  rows_.emplace_back();
  return *this;
}

Csv& Csv::add(double v) {
  rows_.back().push_back(format_double(v));
  return *this;
}

Csv& Csv::add(std::size_t v) {
  rows_.back().push_back(std::to_string(v));
  return *this;
}

Csv& Csv::add(int v) {
  rows_.back().push_back(std::to_string(v));
  return *this;
}

Csv& Csv::add(bool v) {
  rows_.back().push_back(v ? "1" : "0");
  return *this;
}

Csv& Csv::add(const std::string& v) {
  rows_.back().push_back(v);
  return *this;
}

Csv& Csv::add(std::span<const double> values) {
  for (double v : values) add(v);
  return *this;
}

std::string Csv::str() const {
  std::string out;
  for (const auto& c : comments_) out += "# " + c + "\n";
  for (std::size_t i = 0; i < columns_.size(); ++i) out += (i ? "," : "") + columns_[i];
  out += "\n";
  for (const auto& r : rows_) {
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + r[i];
    out += "\n";
  }
  return out;
}

void Csv::save(const std::filesystem::path& path) const { write_text(path, str()); }

namespace {

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return i;
  fail(ErrorCode::Input, "csv: missing column '" + name + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  CsvTable table;
  std::string line;
  bool have_columns = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_columns && line.rfind("# ", 0) == 0) {
      table.comments.push_back(line.substr(2));
      continue;
    }
    if (line.empty()) continue;
    if (!have_columns) {
      table.columns = split_cells(line);
      have_columns = true;
      continue;
    }
    auto cells = split_cells(line);
    require(cells.size() == table.columns.size(), ErrorCode::Input,
            "'" + path.string() + "': row has " + std::to_string(cells.size()) + " cells, expected " +
                std::to_string(table.columns.size()));
    table.rows.push_back(std::move(cells));
  }
  require(have_columns, ErrorCode::Input, "'" + path.string() + "': no column row");
  return table;
}

double parse_double(const std::string& cell) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  require(!cell.empty() && end == cell.c_str() + cell.size(), ErrorCode::Input, "csv: malformed number '" + cell + "'");
  return v;
}

std::vector<Vector> read_numeric_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<Vector> rows;
  std::string line;
  bool header_skipped = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    Vector row;
    std::stringstream cells(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(cells, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      require(!header_skipped && rows.empty(), ErrorCode::Input,
              "'" + path.string() + "': non-numeric row '" + line + "'");
      header_skipped = true;
      continue;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Csv dataset_csv(std::span<const LabeledExample> data) {
  const std::size_t d = data.empty() ? 0 : data.front().x.size();
  std::vector<std::string> cols;
  for (std::size_t i = 0; i < d; ++i) cols.push_back("x" + std::to_string(i));
  cols.push_back("y");
  Csv csv(cols);
  for (const auto& z : data) csv.row().add(std::span<const double>(z.x)).add(z.y);
  return csv;
}

Csv trace_csv(const TrainingTrace& trace) {
  const std::size_t d = trace.thetas.front().size();
  std::vector<std::string> cols{"t", "eta_t", "example_index"};
  for (std::size_t i = 0; i < d; ++i) cols.push_back("theta" + std::to_string(i));
  Csv csv(cols);
  for (std::size_t t = 0; t < trace.thetas.size(); ++t) {
    csv.row().add(t + 1);
    if (t < trace.step_sizes.size())
      csv.add(trace.step_sizes[t]).add(trace.example_indices[t]);
    else
      csv.add("").add("");
    csv.add(std::span<const double>(trace.thetas[t]));
  }
  return csv;
}

}  // namespace cfr::io
