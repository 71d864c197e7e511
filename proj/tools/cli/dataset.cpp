#include "dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_set>

#include "errors.hpp"

namespace sveb::cli {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

std::optional<double> parse_double(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw std::invalid_argument(cell);
  }
  return v;
}

struct Columns {
  std::size_t id, y, n, u1, u2, sampled;
  std::vector<std::size_t> x;
  std::vector<std::string> x_names;
  std::optional<std::size_t> weight;
};

Columns locate(const std::vector<std::string>& header, const LoadOptions& opts) {
  std::map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c].empty()) throw DataError("missing_column", "empty column name in header", 1);
    if (!index.emplace(header[c], c).second) {
      throw DataError("duplicate_column", "column '" + header[c] + "' appears twice", 1);
    }
  }
  auto need = [&](const std::string& name) {
    const auto it = index.find(name);
    if (it == index.end()) throw DataError("missing_column", "required column '" + name + "' is missing", 1);
    return it->second;
  };
  Columns c{need("area_id"), need("y"), need("n"), need("u1"), need("u2"), need("sampled"), {}, {}, std::nullopt};
  for (std::size_t j = 1;; ++j) {
    const auto it = index.find("x" + std::to_string(j));
    if (it == index.end()) break;
    c.x.push_back(it->second);
    c.x_names.push_back(it->first);
  }
  for (const auto& [name, col] : index) {
    if (name.size() > 1 && name[0] == 'x' && std::all_of(name.begin() + 1, name.end(), ::isdigit) &&
        std::find(c.x.begin(), c.x.end(), col) == c.x.end()) {
      throw DataError("missing_column", "covariate columns must be x1..xp without gaps; found '" + name + "'", 1);
    }
  }
  if (opts.weight_column) c.weight = need(*opts.weight_column);
  if (c.x.empty() && !opts.intercept) {
    throw DataError("missing_column", "no covariate columns (x1..xp) and the intercept is disabled", 1);
  }
  return c;
}

}  // namespace

std::size_t Dataset::sampled_count() const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.sampled; }));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

Dataset parse_dataset(const std::string& text, const FamilySpec& spec, const LoadOptions& opts) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::optional<Columns> cols;
  std::size_t width = 0;
  Dataset ds;
  std::unordered_set<std::string> seen;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (!cols) {
      cols = locate(cells, opts);
      width = cells.size();
      continue;
    }
    if (cells.size() != width) {
      throw DataError("bad_row", "expected " + std::to_string(width) + " fields, found " + std::to_string(cells.size()),
                      lineno);
    }
    auto number = [&](std::size_t col, const char* name) -> std::optional<double> {
      try {
        return parse_double(cells[col]);
      } catch (const std::invalid_argument&) {
        throw DataError("non_numeric", std::string("column '") + name + "' is not a number: '" + cells[col] + "'",
                        lineno);
      }
    };
    auto required = [&](std::size_t col, const char* name) {
      const auto v = number(col, name);
      if (!v) throw DataError("missing_value", std::string("column '") + name + "' is empty", lineno);
      return *v;
    };

    AreaRecord rec;
    rec.id = cells[cols->id];
    if (rec.id.empty()) throw DataError("missing_value", "area_id is empty", lineno);
    if (!seen.insert(rec.id).second) throw DataError("duplicate_id", "duplicate area_id '" + rec.id + "'", lineno);
    const double sampled = required(cols->sampled, "sampled");
    if (sampled != 0.0 && sampled != 1.0) throw DataError("bad_value", "sampled must be 0 or 1", lineno);
    rec.sampled = sampled == 1.0;
    rec.u = {required(cols->u1, "u1"), required(cols->u2, "u2")};
    if (opts.intercept) rec.x.push_back(1.0);
    for (std::size_t j = 0; j < cols->x.size(); ++j) rec.x.push_back(required(cols->x[j], cols->x_names[j].c_str()));
    if (rec.sampled) {
      rec.y = required(cols->y, "y");
      rec.n = required(cols->n, "n");
      try {
        validate_record(spec, rec);
      } catch (const InvalidInput& e) {
        const std::string what = e.what();
        const bool integrality = what.find("integer") != std::string::npos;
        throw DataError(integrality ? "integrality" : "bad_value", what, lineno);
      }
    } else {
      // y and n of a non-sampled area are not used; they may be blank.
      number(cols->y, "y");
      number(cols->n, "n");
      rec.y = kNaN;
      rec.n = 0.0;
    }
    if (cols->weight) {
      const auto w = number(*cols->weight, opts.weight_column->c_str());
      const double c = w.value_or(0.0);
      if (c < 0.0) throw DataError("bad_value", "benchmark weight must be >= 0", lineno);
      if (!rec.sampled && c != 0.0) throw DataError("bad_value", "non-sampled area has a nonzero benchmark weight", lineno);
      ds.weights.push_back(c);
    }
    ds.records.push_back(std::move(rec));
  }
  if (!cols) throw DataError("missing_column", "file is empty (header row required)", 1);
  if (ds.sampled_count() == 0) throw DataError("bad_value", "no sampled areas");
  if (opts.intercept) ds.coefficient_names.push_back("intercept");
  for (const auto& name : cols->x_names) ds.coefficient_names.push_back(name);
  return ds;
}

Dataset load_dataset(const std::string& path, const FamilySpec& spec, const LoadOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open input file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("error reading '" + path + "'");
  return parse_dataset(buf.str(), spec, opts);
}

void standardize_coordinates(std::vector<AreaRecord>& records) {
  if (records.empty()) return;
  const double N = static_cast<double>(records.size());
  for (int axis = 0; axis < 2; ++axis) {
    auto get = [axis](AreaRecord& r) -> double& { return axis == 0 ? r.u.u1 : r.u.u2; };
    double mean = 0.0;
    for (auto& r : records) mean += get(r) / N;
    double var = 0.0;
    for (auto& r : records) var += (get(r) - mean) * (get(r) - mean) / N;
    const double sd = std::sqrt(var);
    for (auto& r : records) get(r) = sd > 0.0 ? (get(r) - mean) / sd : get(r) - mean;
  }
}

}  // namespace sveb::cli
