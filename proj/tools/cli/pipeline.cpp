#include "pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include "errors.hpp"
#include "sveb/bandwidth.hpp"
#include "sveb/local_fit.hpp"
#include "sveb/uncertainty.hpp"

namespace sveb::cli {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kDefaultBootstrap = 500;

struct Stages {
  bool mse = false;
  bool benchmark = false;
  bool predict = false;
};

Stages stages_for(const std::string& command) {
  if (command == "mse") return {true, false, false};
  if (command == "benchmark") return {true, true, false};
  if (command == "predict") return {false, false, true};
  if (command == "run") return {true, true, true};
  return {};
}

FitOptions fit_options(const RunConfig& cfg) {
  FitOptions o;
  o.max_iterations = cfg.max_iterations;
  o.workers = cfg.threads;
  return o;
}

BootstrapConfig bootstrap_config(const RunConfig& cfg) {
  BootstrapConfig b;
  b.replicates = cfg.bootstrap_or(kDefaultBootstrap);
  b.seed = cfg.seed;
  b.refit_bandwidth = cfg.refit_bandwidth;
  b.fit = fit_options(cfg);
  b.workers = cfg.threads;
  return b;
}

std::string flag(bool b) { return b ? "1" : "0"; }

// Joins already-formatted cells into one CSV line.
std::string row(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += cells[i];
  }
  return out + "\n";
}

struct FitResult {
  HyperParams global;
  double bandwidth = 0.0;
  std::optional<BandwidthSelection> selection;
  SvFit fit;
};

FitResult fit_stage(const RunConfig& cfg, const FamilySpec& spec, const Dataset& ds, std::ostream& log) {
  const FitOptions opts = fit_options(cfg);
  FitResult r;
  r.global = fit_constant(spec, ds.records, opts).params;
  if (cfg.bandwidth) {
    r.bandwidth = *cfg.bandwidth;
  } else {
    BandwidthSearch search = BandwidthSearch::defaults(ds.records);
    if (cfg.bandwidth_lo) search.lo = *cfg.bandwidth_lo;
    if (cfg.bandwidth_hi) search.hi = *cfg.bandwidth_hi;
    if (cfg.bandwidth_hi && !cfg.bandwidth_tol) search.tol = 1e-3 * search.hi;
    if (cfg.bandwidth_tol) search.tol = *cfg.bandwidth_tol;
    search.validate();
    r.selection = select_bandwidth(spec, ds.records, search, r.global, opts);
    r.bandwidth = r.selection->bandwidth;
  }
  log << "bandwidth " << format_number(r.bandwidth) << (cfg.bandwidth ? " (fixed)" : " (cross-validated)") << "\n";
  r.fit = fit_all(spec, ds.records, KernelConfig{r.bandwidth}, r.global, opts);
  if (r.fit.failed_count() > 0) log << r.fit.failed_count() << " local fit(s) failed; see the failed column\n";
  return r;
}

std::string bandwidth_csv(const FitResult& r) {
  std::string out = row({"kind", "bandwidth", "cv", "message"});
  if (r.selection) {
    for (const auto& ev : r.selection->evaluations) {
      out += row({"evaluation", format_number(ev.bandwidth), std::isfinite(ev.cv) ? format_number(ev.cv) : "inf",
                  csv_escape(ev.failure)});
    }
  }
  out += row({"selected", format_number(r.bandwidth), "", r.selection ? "" : "fixed"});
  return out;
}

std::vector<double> benchmark_weights(const RunConfig& cfg, const Dataset& ds) {
  if (cfg.benchmark_weights == "n") return default_benchmark_weights(ds.records);
  std::vector<double> c = ds.weights;
  validate_benchmark_weights(c);
  return c;
}

std::vector<std::string> param_header(const Dataset& ds) {
  std::vector<std::string> h;
  for (const auto& name : ds.coefficient_names) h.push_back("beta_" + name);
  h.push_back("nu");
  return h;
}

void append_params(std::vector<std::string>& cells, const LocalFit& f) {
  for (double b : f.params.beta) cells.push_back(format_number(b));
  cells.push_back(format_number(f.params.nu));
  cells.push_back(flag(f.diagnostics.converged));
  cells.push_back(flag(f.diagnostics.at_bound));
  cells.push_back(flag(f.diagnostics.failed));
  cells.push_back(std::to_string(f.diagnostics.iterations));
}

void write_cv_curve(const RunConfig& cfg, const FamilySpec& spec, const Dataset& ds, std::ostream& log) {
  const auto grid = parse_grid(cfg.grid);
  const auto curve = cv_curve(spec, ds.records, grid, fit_options(cfg));
  std::string out = row({"bandwidth", "cv", "message"});
  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < curve.size(); ++k) {
    const auto& ev = curve[k];
    out += row({format_number(ev.bandwidth), std::isfinite(ev.cv) ? format_number(ev.cv) : "inf", csv_escape(ev.failure)});
    if (std::isfinite(ev.cv) && (!best || ev.cv < curve[*best].cv)) best = k;
  }
  write_text_file(cfg.output, "cv_curve.csv", out);
  nlohmann::ordered_json results;
  results["grid_points"] = grid.size();
  if (best) {
    results["grid_minimizer"] = curve[*best].bandwidth;
    log << "grid minimizer " << format_number(curve[*best].bandwidth) << "\n";
  } else {
    results["grid_minimizer"] = nullptr;
  }
  write_manifest(cfg, results, {"cv_curve.csv"});
}

}  // namespace

Dataset load_for(const RunConfig& cfg) {
  const FamilySpec spec = FamilySpec::parse(cfg.family);
  LoadOptions lo;
  lo.intercept = cfg.intercept;
  if (cfg.benchmark_weights.rfind("column:", 0) == 0) lo.weight_column = cfg.benchmark_weights.substr(7);
  Dataset ds = load_dataset(cfg.input, spec, lo);
  if (cfg.standardize) standardize_coordinates(ds.records);
  return ds;
}

void write_text_file(const std::string& dir, const std::string& name, const std::string& content) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
  const auto path = std::filesystem::path(dir) / name;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << content;
  out.flush();
  if (!out) throw IoError("error writing '" + path.string() + "'");
}

void write_manifest(const RunConfig& cfg, const nlohmann::ordered_json& results,
                    const std::vector<std::string>& outputs) {
  nlohmann::ordered_json m;
  m["tool"] = "sveb";
  m["version"] = kToolVersion;
  m["command"] = cfg.command;
  m["config"] = to_json(cfg);
  m["results"] = results;
  m["outputs"] = outputs;
  write_text_file(cfg.output, "manifest.json", m.dump(2) + "\n");
}

RunConfig read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("manifest '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("config")) throw InvalidInput("manifest '" + path + "' has no config section");
  return config_from_json(j.at("config"));
}

void run_data_command(const RunConfig& cfg, std::ostream& log) {
  const FamilySpec spec = FamilySpec::parse(cfg.family);
  const Dataset ds = load_for(cfg);
  log << "loaded " << ds.records.size() << " areas (" << ds.sampled_count() << " sampled, p = "
      << ds.coefficient_names.size() << ")\n";
  if (cfg.command == "cv-curve") {
    write_cv_curve(cfg, spec, ds, log);
    return;
  }

  const Stages st = stages_for(cfg.command);
  const std::vector<double> c = st.benchmark && cfg.benchmark_weights != "none" ? benchmark_weights(cfg, ds)
                                                                               : std::vector<double>{};
  const FitResult fr = fit_stage(cfg, spec, ds, log);
  const SvFit& fit = fr.fit;
  const std::size_t N = ds.records.size();
  const BootstrapConfig bcfg = bootstrap_config(cfg);

  std::optional<BootstrapRun> run;
  std::optional<HybridMse> hybrid;
  if (st.mse) {
    run = run_bootstrap(spec, fit, ds.records, bcfg);
    hybrid = hybrid_mse(spec, fit, ds.records, *run);
    log << "bootstrap " << run->used() << " of " << run->replicates.size() << " replicates used\n";
  }
  std::vector<double> mu_hat(N, kNaN), y(N, kNaN);
  for (std::size_t i = 0; i < N; ++i) {
    if (!ds.records[i].sampled) continue;
    const auto& r = ds.records[i];
    mu_hat[i] = bayes_estimate(spec, r.y, r.n, fit.params(i), r.x);
    y[i] = r.y;
  }
  std::vector<double> bench(N, kNaN);
  std::optional<ExcessMse> excess;
  if (!c.empty()) {
    bench = benchmark_estimates(mu_hat, y, c);
    for (std::size_t i = 0; i < N; ++i) {
      if (!ds.records[i].sampled) bench[i] = kNaN;
    }
    excess = excess_mse(fit, ds.records, c, *run);
  }

  std::vector<std::string> header{"area_id", "y", "n", "mu_sveb", "naive_mse", "hybrid_mse", "hybrid_mse_raw",
                                  "hybrid_truncated", "mu_benchmarked", "excess_mse", "excess_negative"};
  for (auto& h : param_header(ds)) header.push_back(h);
  for (const char* h : {"converged", "at_bound", "failed", "iterations"}) header.push_back(h);
  std::string est = row(header);
  const auto naive = naive_mse(spec, fit, ds.records);
  for (std::size_t i = 0; i < N; ++i) {
    const auto& r = ds.records[i];
    if (!r.sampled) continue;
    std::vector<std::string> cells{csv_escape(r.id), format_number(r.y), format_number(r.n), format_number(mu_hat[i]),
                                   format_number(naive[i])};
    if (hybrid) {
      cells.push_back(format_number(hybrid->value[i]));
      cells.push_back(format_number(hybrid->raw[i]));
      cells.push_back(flag(hybrid->truncated[i]));
    } else {
      cells.insert(cells.end(), {"", "", ""});
    }
    cells.push_back(format_number(bench[i]));
    if (excess) {
      cells.push_back(format_number(excess->value[i]));
      cells.push_back(flag(excess->negative[i]));
    } else {
      cells.insert(cells.end(), {"", ""});
    }
    append_params(cells, *fit.areas[i]);
    est += row(cells);
  }

  std::vector<std::string> outputs{"estimates.csv", "bandwidth.csv"};
  write_text_file(cfg.output, "estimates.csv", est);
  write_text_file(cfg.output, "bandwidth.csv", bandwidth_csv(fr));

  nlohmann::ordered_json results;
  results["bandwidth"] = fr.bandwidth;
  results["areas"] = N;
  results["sampled_areas"] = ds.sampled_count();
  results["failed_local_fits"] = fit.failed_count();
  if (run) {
    results["bootstrap_used"] = run->used();
    results["bootstrap_failed"] = run->failed();
  }

  if (st.predict) {
    std::vector<std::string> ph{"area_id", "mu_predicted", "mse", "mse_raw", "mse_truncated",
                                "leading", "variability", "cross"};
    for (auto& h : param_header(ds)) ph.push_back(h);
    for (const char* h : {"converged", "at_bound", "failed", "iterations"}) ph.push_back(h);
    std::string pred = row(ph);
    const KernelConfig kernel{fr.bandwidth};
    std::size_t count = 0;
    for (std::size_t j = 0; j < N; ++j) {
      const auto& r = ds.records[j];
      if (r.sampled) continue;
      const NonsampledPrediction p = predict_nonsampled(spec, j, ds.records, kernel, fr.global, fit_options(cfg));
      const NonsampledMse m = nonsampled_mse(spec, j, ds.records, fit, kernel, bcfg);
      std::vector<std::string> cells{csv_escape(r.id),      format_number(p.mean),    format_number(m.value),
                                     format_number(m.raw),  flag(m.truncated),        format_number(m.leading),
                                     format_number(m.variability), format_number(m.cross)};
      append_params(cells, p.fit);
      pred += row(cells);
      ++count;
    }
    write_text_file(cfg.output, "predictions.csv", pred);
    outputs.push_back("predictions.csv");
    results["nonsampled_areas"] = count;
    log << "predicted " << count << " non-sampled area(s)\n";
  }
  write_manifest(cfg, results, outputs);
  log << "wrote " << cfg.output << "\n";
}

void execute(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  if (cfg.command == "simulate") {
    run_simulate(cfg, log);
  } else {
    run_data_command(cfg, log);
  }
}

}  // namespace sveb::cli
