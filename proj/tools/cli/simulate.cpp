#include <algorithm>
#include <cmath>
#include <ostream>

#include "dataset.hpp"
#include "pipeline.hpp"
#include "sveb/simharness.hpp"

namespace sveb::cli {
namespace {

using nlohmann::ordered_json;

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + h, v.end());
  double m = v[h];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + h));
  return m;
}

std::string row(std::initializer_list<std::string> cells) {
  std::string out;
  bool first = true;
  for (const auto& c : cells) {
    if (!first) out += ',';
    out += c;
    first = false;
  }
  return out + "\n";
}

void run_table1(const RunConfig& cfg, const FamilySpec& spec, std::ostream& log) {
  sim::RbCvConfig rc = sim::RbCvConfig::table1(spec, cfg.replications.value_or(100), cfg.iterations.value_or(100),
                                               cfg.bootstrap_or(100), cfg.seed);
  if (cfg.areas) rc.scenario.sampled = *cfg.areas;
  rc.scenario.fit.max_iterations = cfg.max_iterations;
  rc.scenario.workers = cfg.threads;
  rc.bootstrap.workers = cfg.threads;
  rc.bootstrap.fit.max_iterations = cfg.max_iterations;
  rc.bootstrap.seed = cfg.seed;
  rc.scenario.validate();
  log << "table1: m = " << rc.scenario.sampled << ", R = " << rc.scenario.replications << ", S = " << rc.iterations
      << ", B = " << rc.bootstrap.replicates << "\n";
  const sim::RbCvResult res = sim::rb_cv_study(rc);

  std::string table = row({"family", "group", "n", "rb", "cv", "rbn", "cvn"});
  for (std::size_t g = 0; g < res.groups.size(); ++g) {
    const auto& s = res.groups[g];
    table += row({cfg.family, std::to_string(g + 1), format_number(s.n), format_number(s.rb), format_number(s.cv),
                  format_number(s.rbn), format_number(s.cvn)});
  }
  std::string areas = row({"area", "group", "n", "true_mse", "rb", "cv", "rbn", "cvn"});
  for (std::size_t i = 0; i < res.true_mse.size(); ++i) {
    areas += row({std::to_string(i), std::to_string(rc.scenario.group_of(i) + 1), format_number(rc.scenario.n_for(i)),
                  format_number(res.true_mse[i]), format_number(res.hybrid.rb[i]), format_number(res.hybrid.cv[i]),
                  format_number(res.naive.rb[i]), format_number(res.naive.cv[i])});
  }
  write_text_file(cfg.output, "table1.csv", table);
  write_text_file(cfg.output, "table1_areas.csv", areas);

  ordered_json results;
  results["truth_replicates_used"] = res.truth_replicates_used;
  results["iterations_used"] = res.iterations_used;
  results["iterations_failed"] = res.iterations_failed;
  write_manifest(cfg, results, {"table1.csv", "table1_areas.csv"});
  log << "wrote " << cfg.output << "\n";
}

void run_rd(const RunConfig& cfg, const FamilySpec& spec, std::ostream& log) {
  sim::ScenarioConfig sc;
  sc.family = spec;
  sc.sampled = cfg.areas.value_or(60);
  sc.nonsampled = cfg.preset == "nonsampled" ? cfg.nonsampled_areas.value_or(20) : 0;
  sc.n_groups = {20.0};
  sc.scenario = sim::parse_scenario(cfg.scenario);
  sc.replications = cfg.replications.value_or(200);
  sc.seed = cfg.seed;
  sc.fit.max_iterations = cfg.max_iterations;
  sc.workers = cfg.threads;
  sc.validate();
  log << cfg.preset << ": scenario " << cfg.scenario << ", m = " << sc.sampled << ", k = " << sc.nonsampled
      << ", R = " << sc.replications << "\n";

  const std::vector<sim::Estimator> est{sim::method_estimator(sc, sim::Method::sv),
                                        sim::method_estimator(sc, sim::Method::sc)};
  const sim::MseTable t = sim::simulate_mse(sc, est);
  const auto rd = sim::relative_difference(t.mse[0], t.mse[1]);
  const sim::Design design = sim::replicate_design(sc, 0);

  std::string out = row({"area_id", "sampled", "u1", "u2", "mse_sv", "mse_sc", "rd"});
  std::vector<double> rd_sampled, rd_nonsampled;
  for (std::size_t i = 0; i < sc.total_areas(); ++i) {
    const bool sampled = i < sc.sampled;
    out += row({std::to_string(i), sampled ? "1" : "0", format_number(design.u[i].u1), format_number(design.u[i].u2),
                format_number(t.mse[0][i]), format_number(t.mse[1][i]), rd[i] ? format_number(*rd[i]) : ""});
    if (rd[i]) (sampled ? rd_sampled : rd_nonsampled).push_back(*rd[i]);
  }
  const std::string name = cfg.preset + ".csv";
  write_text_file(cfg.output, name, out);

  ordered_json results;
  results["replicates_used"] = t.replicates_used;
  results["replicates_failed"] = t.replicates_failed;
  auto summary = [](const std::vector<double>& v) {
    ordered_json s;
    if (v.empty()) return s;
    double mean = 0.0;
    std::size_t neg = 0;
    for (double x : v) {
      mean += x;
      neg += x < 0.0;
    }
    s["areas"] = v.size();
    s["mean_rd"] = mean / static_cast<double>(v.size());
    s["median_rd"] = median(v);
    s["fraction_negative"] = static_cast<double>(neg) / static_cast<double>(v.size());
    return s;
  };
  results["sampled"] = summary(rd_sampled);
  if (sc.nonsampled > 0) results["nonsampled"] = summary(rd_nonsampled);
  write_manifest(cfg, results, {name});
  log << "wrote " << cfg.output << "\n";
}

}  // namespace

void run_simulate(const RunConfig& cfg, std::ostream& log) {
  const FamilySpec spec = FamilySpec::parse(cfg.family);
  if (cfg.preset == "table1") {
    run_table1(cfg, spec, log);
  } else {
    run_rd(cfg, spec, log);
  }
}

}  // namespace sveb::cli
