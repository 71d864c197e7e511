#include "app.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <optional>
#include <ostream>

#include "config.hpp"
#include "errors.hpp"
#include "pipeline.hpp"

namespace sveb::cli {
namespace {

struct Failure {
  int code;
  std::string category;
  std::string message;
  std::optional<std::size_t> line;
};

void report(std::ostream& err, const std::string& command, const Failure& f) {
  nlohmann::ordered_json j;
  j["status"] = "error";
  j["exit_code"] = f.code;
  j["category"] = f.category;
  if (!command.empty()) j["command"] = command;
  j["message"] = f.message;
  if (f.line) j["line"] = *f.line;
  err << j.dump() << "\n";
}

template <class T>
void take(const CLI::Option* opt, std::optional<T>& dst, const T& value) {
  if (opt->count() > 0) dst = value;
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatially varying empirical Bayes small area estimation", "sveb"};
  app.set_version_flag("--version", std::string("sveb ") + kToolVersion);
  app.set_config("--config", "", "flat key = value file; command-line flags take precedence");
  app.require_subcommand(1);

  RunConfig cfg;
  double bandwidth = 0, bw_lo = 0, bw_hi = 0, bw_tol = 0;
  int bootstrap = 0, replications = 0, iterations = 0;
  std::size_t areas = 0, nonsampled = 0;

  app.add_option("--family", cfg.family, "gaussian | poisson_gamma | binomial_beta");
  app.add_option("--input", cfg.input, "area-level CSV");
  app.add_option("--output", cfg.output, "output directory")->capture_default_str();
  app.add_flag("--standardize,!--no-standardize", cfg.standardize, "standardize coordinates (default on)");
  app.add_flag("--intercept,!--no-intercept", cfg.intercept, "prepend an intercept column (default on)");
  auto* o_bw = app.add_option("--bandwidth", bandwidth, "fixed bandwidth (skips cross-validation)");
  auto* o_lo = app.add_option("--bandwidth-lo", bw_lo, "lower end of the bandwidth search");
  auto* o_hi = app.add_option("--bandwidth-hi", bw_hi, "upper end of the bandwidth search");
  auto* o_tol = app.add_option("--bandwidth-tol", bw_tol, "golden-section tolerance");
  auto* o_boot = app.add_option("--bootstrap", bootstrap, "bootstrap replicates B");
  app.add_option("--seed", cfg.seed, "master seed")->capture_default_str();
  app.add_flag("--refit-bandwidth", cfg.refit_bandwidth, "re-select the bandwidth inside each bootstrap replicate");
  app.add_option("--benchmark-weights", cfg.benchmark_weights, "n | none | column:NAME")->capture_default_str();
  app.add_option("--max-iterations", cfg.max_iterations, "EM iteration cap")->capture_default_str();
  app.add_option("--threads", cfg.threads, "worker threads (0 = hardware)");
  app.add_option("--grid", cfg.grid, "cv-curve bandwidths: lo:hi:count or a comma list");
  app.add_option("--preset", cfg.preset, "simulate preset: table1 | rd | nonsampled");
  app.add_option("--scenario", cfg.scenario, "simulate scenario: varying | constant")->capture_default_str();
  auto* o_rep = app.add_option("--replications", replications, "simulation replicates R");
  auto* o_it = app.add_option("--iterations", iterations, "estimation iterations S (table1)");
  auto* o_m = app.add_option("--areas", areas, "sampled areas m");
  auto* o_k = app.add_option("--nonsampled-areas", nonsampled, "non-sampled areas k");

  const std::pair<const char*, const char*> commands[] = {
      {"fit", "select the bandwidth and fit every sampled area"},
      {"mse", "fit plus naive and hybrid bootstrap MSE"},
      {"benchmark", "fit, MSE, benchmarked estimates and their excess MSE"},
      {"predict", "fit plus predictions and MSE for non-sampled areas"},
      {"run", "all data stages"},
      {"cv-curve", "cross-validation criterion on a bandwidth grid"},
      {"simulate", "simulation study presets"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();
  std::string manifest;
  auto* rerun = app.add_subcommand("rerun", "repeat a run from its manifest.json")->fallthrough();
  rerun->add_option("--manifest", manifest, "manifest.json of a previous run")->required();

  std::string command;
  try {
    app.parse(argc, argv);
    command = app.get_subcommands().front()->get_name();
    if (command == "rerun") {
      const auto* o_out = app.get_option("--output");
      const auto* o_threads = app.get_option("--threads");
      const std::string output = cfg.output;
      const unsigned threads = cfg.threads;
      cfg = read_manifest(manifest);
      if (o_out->count() > 0) cfg.output = output;
      if (o_threads->count() > 0) cfg.threads = threads;
    } else {
      cfg.command = command;
      take(o_bw, cfg.bandwidth, bandwidth);
      take(o_lo, cfg.bandwidth_lo, bw_lo);
      take(o_hi, cfg.bandwidth_hi, bw_hi);
      take(o_tol, cfg.bandwidth_tol, bw_tol);
      take(o_boot, cfg.bootstrap, bootstrap);
      take(o_rep, cfg.replications, replications);
      take(o_it, cfg.iterations, iterations);
      take(o_m, cfg.areas, areas);
      take(o_k, cfg.nonsampled_areas, nonsampled);
    }
    execute(cfg, out);
    return kOk;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    report(err, command, {kValidation, "usage", e.what(), std::nullopt});
    return kValidation;
  } catch (const DataError& e) {
    report(err, command, {kValidation, "data:" + e.kind(), e.what(), e.line()});
    return kValidation;
  } catch (const InvalidInput& e) {
    report(err, command, {kValidation, "validation", e.what(), std::nullopt});
    return kValidation;
  } catch (const NumericalFailure& e) {
    report(err, command, {kNumerical, "numerical", e.what(), std::nullopt});
    return kNumerical;
  } catch (const IoError& e) {
    report(err, command, {kIo, "io", e.what(), std::nullopt});
    return kIo;
  } catch (const std::exception& e) {
    report(err, command, {kInternal, "internal", e.what(), std::nullopt});
    return kInternal;
  }
}

}  // namespace sveb::cli
