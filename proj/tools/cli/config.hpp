#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace sveb::cli {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunConfig {
  std::string command;  // fit, mse, benchmark, predict, run, cv-curve, simulate
  std::string family;
  std::string input;
  std::string output = "sveb-out";

  bool standardize = true;
  bool intercept = true;

  // Fixed bandwidth, or golden-section search with optional overrides.
  std::optional<double> bandwidth;
  std::optional<double> bandwidth_lo;
  std::optional<double> bandwidth_hi;
  std::optional<double> bandwidth_tol;

  std::optional<int> bootstrap;  // B; 500 for data runs, preset value for simulate
  std::uint64_t seed = 20240101;
  bool refit_bandwidth = false;
  /// "n" (c_i proportional to n_i), "none", or "column:<name>".
  std::string benchmark_weights = "n";

  int max_iterations = 500;
  unsigned threads = 0;

  /// cv-curve grid: "lo:hi:count" (log-spaced) or a comma list.
  std::string grid;

  // simulate
  std::string preset;
  std::string scenario = "varying";
  std::optional<int> replications;
  std::optional<int> iterations;
  std::optional<std::size_t> areas;
  std::optional<std::size_t> nonsampled_areas;

  /// Throws InvalidInput on inconsistent settings.
  void validate() const;
  [[nodiscard]] int bootstrap_or(int fallback) const { return bootstrap.value_or(fallback); }
};

nlohmann::ordered_json to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j);

/// Parses a cv-curve grid specification.
std::vector<double> parse_grid(const std::string& spec);

}  // namespace sveb::cli
