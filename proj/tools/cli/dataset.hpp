#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "sveb/family.hpp"

namespace sveb::cli {

struct LoadOptions {
  /// Prepend a constant 1 to every covariate vector.
  bool intercept = true;
  /// Extra numeric column read as benchmark weights (0 or empty on non-sampled rows).
  std::optional<std::string> weight_column;
};

struct Dataset {
  std::vector<AreaRecord> records;
  /// Names of the entries of AreaRecord::x, e.g. {"intercept", "x1"}.
  std::vector<std::string> coefficient_names;
  std::vector<double> weights;  // empty unless LoadOptions::weight_column
  [[nodiscard]] std::size_t sampled_count() const;
};

/// Reads area_id, y, n, u1, u2, sampled and x1..xp from a CSV file with a
/// header row; p is the number of x columns. Throws DataError (with the
/// file line) on bad content and IoError when the file cannot be read.
Dataset load_dataset(const std::string& path, const FamilySpec& spec, const LoadOptions& opts = {});
Dataset parse_dataset(const std::string& text, const FamilySpec& spec, const LoadOptions& opts = {});

/// z-score each coordinate axis over all records; an axis with zero spread
/// is only centered.
void standardize_coordinates(std::vector<AreaRecord>& records);

// CSV helpers shared by the writers.
std::vector<std::string> split_csv_line(const std::string& line);
std::string format_number(double v);  // %.12g, empty for NaN
std::string csv_escape(const std::string& s);

}  // namespace sveb::cli
