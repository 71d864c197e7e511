#include "config.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "dataset.hpp"
#include "sveb/errors.hpp"
#include "sveb/family.hpp"

namespace sveb::cli {
namespace {

const std::set<std::string> kDataCommands = {"fit", "mse", "benchmark", "predict", "run", "cv-curve"};
const std::set<std::string> kPresets = {"table1", "rd", "nonsampled"};

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidInput(what + ": '" + s + "' is not a number");
  }
}

template <class T>
void put(nlohmann::ordered_json& j, const char* key, const std::optional<T>& v) {
  if (v) {
    j[key] = *v;
  } else {
    j[key] = nullptr;
  }
}

template <class T>
void get(const nlohmann::json& j, const char* key, std::optional<T>& v) {
  if (!j.contains(key) || j.at(key).is_null()) {
    v.reset();
  } else {
    v = j.at(key).get<T>();
  }
}

template <class T>
void get(const nlohmann::json& j, const char* key, T& v) {
  if (j.contains(key) && !j.at(key).is_null()) v = j.at(key).get<T>();
}

}  // namespace

void RunConfig::validate() const {
  if (command != "simulate" && !kDataCommands.count(command)) throw InvalidInput("unknown command '" + command + "'");
  if (family.empty()) throw InvalidInput("--family is required");
  FamilySpec::parse(family);
  if (max_iterations < 1) throw InvalidInput("--max-iterations must be >= 1");
  if (bootstrap && *bootstrap < 2) throw InvalidInput("--bootstrap must be >= 2");

  if (command == "simulate") {
    if (!kPresets.count(preset)) throw InvalidInput("--preset must be one of table1, rd, nonsampled");
    if (replications && *replications < 1) throw InvalidInput("--replications must be >= 1");
    if (iterations && *iterations < 1) throw InvalidInput("--iterations must be >= 1");
    if (FamilySpec::parse(family).id == FamilyId::gaussian) {
      throw InvalidInput("simulation presets cover poisson_gamma and binomial_beta only");
    }
    return;
  }
  if (input.empty()) throw InvalidInput("--input is required");
  if (bandwidth) {
    if (!(*bandwidth > 0.0)) throw InvalidInput("--bandwidth must be positive");
    if (bandwidth_lo || bandwidth_hi || bandwidth_tol) {
      throw InvalidInput("--bandwidth fixes b; it cannot be combined with --bandwidth-lo/-hi/-tol");
    }
  }
  if (benchmark_weights != "n" && benchmark_weights != "none" && benchmark_weights.rfind("column:", 0) != 0) {
    throw InvalidInput("--benchmark-weights must be n, none or column:<name>");
  }
  if (benchmark_weights == "column:") throw InvalidInput("--benchmark-weights column: needs a column name");
  if (command == "cv-curve") {
    if (grid.empty()) throw InvalidInput("cv-curve needs --grid");
    parse_grid(grid);
  }
}

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> out;
  if (spec.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ':')) parts.push_back(part);
    if (parts.size() != 3) throw InvalidInput("--grid range must look like lo:hi:count");
    const double lo = to_double(parts[0], "--grid");
    const double hi = to_double(parts[1], "--grid");
    const double count = to_double(parts[2], "--grid");
    if (!(lo > 0.0) || !(hi > lo) || count < 2 || count != std::floor(count) || count > 10000) {
      throw InvalidInput("--grid needs 0 < lo < hi and an integer count in [2, 10000]");
    }
    const int k = static_cast<int>(count);
    for (int i = 0; i < k; ++i) out.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (k - 1)));
    return out;
  }
  for (const auto& cell : split_csv_line(spec)) {
    const double b = to_double(cell, "--grid");
    if (!(b > 0.0)) throw InvalidInput("--grid bandwidths must be positive");
    out.push_back(b);
  }
  if (out.empty()) throw InvalidInput("--grid is empty");
  return out;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["command"] = c.command;
  j["family"] = c.family;
  j["input"] = c.input;
  j["output"] = c.output;
  j["standardize"] = c.standardize;
  j["intercept"] = c.intercept;
  put(j, "bandwidth", c.bandwidth);
  put(j, "bandwidth_lo", c.bandwidth_lo);
  put(j, "bandwidth_hi", c.bandwidth_hi);
  put(j, "bandwidth_tol", c.bandwidth_tol);
  put(j, "bootstrap", c.bootstrap);
  j["seed"] = c.seed;
  j["refit_bandwidth"] = c.refit_bandwidth;
  j["benchmark_weights"] = c.benchmark_weights;
  j["max_iterations"] = c.max_iterations;
  j["grid"] = c.grid;
  j["preset"] = c.preset;
  j["scenario"] = c.scenario;
  put(j, "replications", c.replications);
  put(j, "iterations", c.iterations);
  put(j, "areas", c.areas);
  put(j, "nonsampled_areas", c.nonsampled_areas);
  return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidInput("manifest config must be a JSON object");
  RunConfig c;
  try {
    get(j, "command", c.command);
    get(j, "family", c.family);
    get(j, "input", c.input);
    get(j, "output", c.output);
    get(j, "standardize", c.standardize);
    get(j, "intercept", c.intercept);
    get(j, "bandwidth", c.bandwidth);
    get(j, "bandwidth_lo", c.bandwidth_lo);
    get(j, "bandwidth_hi", c.bandwidth_hi);
    get(j, "bandwidth_tol", c.bandwidth_tol);
    get(j, "bootstrap", c.bootstrap);
    get(j, "seed", c.seed);
    get(j, "refit_bandwidth", c.refit_bandwidth);
    get(j, "benchmark_weights", c.benchmark_weights);
    get(j, "max_iterations", c.max_iterations);
    get(j, "grid", c.grid);
    get(j, "preset", c.preset);
    get(j, "scenario", c.scenario);
    get(j, "replications", c.replications);
    get(j, "iterations", c.iterations);
    get(j, "areas", c.areas);
    get(j, "nonsampled_areas", c.nonsampled_areas);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("manifest config has a field of the wrong type: ") + e.what());
  }
  return c;
}

}  // namespace sveb::cli
