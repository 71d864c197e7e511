#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sveb/family.hpp"
#include "sveb/local_fit.hpp"
#include "sveb/uncertainty.hpp"

namespace sveb::sim {

/// (I): beta0 = u1 - u2 - 1, beta1 = |u|, nu = nu_scale * exp(u1 + u2 - 1).
/// (II): beta0 = 0.1, beta1 = 0.7, nu = 50.
enum class Scenario { varying, constant };
enum class Method { sv, sc };

std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view name);

struct ScenarioConfig {
  FamilySpec family = FamilySpec::make(FamilyId::poisson_gamma);
  std::size_t sampled = 60;
  std::size_t nonsampled = 0;
  /// Areas are split in order into equal groups, one n value per group.
  std::vector<double> n_groups = {20.0};
  Scenario scenario = Scenario::varying;
  double nu_scale = 20.0;
  int replications = 200;
  std::uint64_t seed = 1;
  /// Redraw coordinates and covariates in every replicate.
  bool redraw_design = false;
  /// SV re-selects the bandwidth in every replicate; otherwise fixed_bandwidth.
  bool reselect_bandwidth = true;
  std::optional<double> fixed_bandwidth;
  /// Golden-section tolerance as a fraction of the upper bandwidth bound.
  double cv_tol_fraction = 1e-2;
  double max_failure_fraction = 0.10;
  FitOptions fit;
  /// Threads over replicates; 0 means default_workers().
  unsigned workers = 0;

  void validate() const;
  [[nodiscard]] std::size_t total_areas() const { return sampled + nonsampled; }
  [[nodiscard]] double n_for(std::size_t area) const;
  [[nodiscard]] std::size_t group_of(std::size_t area) const;
};

/// Fixed per-study quantities: coordinates, covariate, n.
struct Design {
  std::vector<Coord> u;
  std::vector<double> covariate;
  std::vector<double> n;
};

Design draw_design(const ScenarioConfig& cfg, RandomStream& rng);
/// The design used by replicate r (the study design unless redraw_design).
Design replicate_design(const ScenarioConfig& cfg, std::size_t replicate);

/// Scenario hyperparameters at location u; beta = (beta0, beta1).
HyperParams true_params(const ScenarioConfig& cfg, const Coord& u);

/// One simulated data set. Estimators only need `records`; non-sampled
/// records carry y = NaN. Reading the truth through truth() is counted so
/// tests can assert fitting paths never touch it.
class SimDataset;
namespace detail {
const std::vector<double>& scoring_truth(const SimDataset& ds);
}  // namespace detail

class SimDataset {
 public:
  SimDataset(std::vector<AreaRecord> records, std::vector<double> truth);
  SimDataset(const SimDataset& other);
  SimDataset& operator=(const SimDataset&) = delete;

  std::vector<AreaRecord> records;

  const std::vector<double>& truth() const;
  [[nodiscard]] std::size_t truth_reads() const { return truth_reads_.load(); }

 private:
  friend const std::vector<double>& detail::scoring_truth(const SimDataset& ds);
  std::vector<double> truth_;
  mutable std::atomic<std::size_t> truth_reads_{0};
};

/// Draws mu for all areas and y for sampled areas.
SimDataset gen_scenario(const ScenarioConfig& cfg, const Design& design, RandomStream& rng);
/// gen_scenario for replicate r with its canonical stream.
SimDataset gen_replicate(const ScenarioConfig& cfg, std::size_t replicate);

/// Maps a data set to one estimate per area (sampled and non-sampled).
using Estimator = std::function<std::vector<double>(const SimDataset&)>;

Estimator sv_estimator(const ScenarioConfig& cfg);
Estimator sc_estimator(const ScenarioConfig& cfg);
Estimator method_estimator(const ScenarioConfig& cfg, Method method);

struct MseTable {
  /// mse[e][i]: simulated MSE of estimator e at area i.
  std::vector<std::vector<double>> mse;
  std::size_t replicates_used = 0;
  std::size_t replicates_failed = 0;
  /// truth() reads made by estimators, summed over replicates.
  std::size_t truth_reads = 0;
};

/// R^-1 sum_r (mu_hat_i^(r) - mu_i^(r))^2 for each estimator on common
/// replicates. A replicate where any estimator throws NumericalFailure is
/// dropped for all of them.
MseTable simulate_mse(const ScenarioConfig& cfg, std::span<const Estimator> estimators);
std::vector<double> simulate_mse(const ScenarioConfig& cfg, Method method);

/// 100 (sqrt(MSE_SV) - sqrt(MSE_SC)) / sqrt(MSE_SC); empty where MSE_SC == 0.
std::vector<std::optional<double>> relative_difference(std::span<const double> mse_sv,
                                                       std::span<const double> mse_sc);

struct GroupSummary {
  double n = 0.0;
  double rb = 0.0;   // hybrid estimator, percent
  double cv = 0.0;
  double rbn = 0.0;  // naive estimator, percent
  double cvn = 0.0;
};

struct RbCv {
  std::vector<double> rb;  // percent, per area
  std::vector<double> cv;
};

/// RB_i = 100 mean_s (est_si - mse_i) / mse_i, CV_i = 100 sqrt(mean_s ((est_si - mse_i) / mse_i)^2).
RbCv rb_cv(std::span<const double> true_mse, std::span<const std::vector<double>> estimates);

struct RbCvConfig {
  ScenarioConfig scenario;  // replications = R for the truth runs
  int iterations = 100;     // S
  BootstrapConfig bootstrap;

  /// m = 50, n groups (10, 15, 20, 25, 30), nu(u) = 30 exp(u1 + u2 - 1).
  static RbCvConfig table1(FamilySpec family, int R, int S, int B, std::uint64_t seed);
};

struct RbCvResult {
  std::vector<double> true_mse;
  RbCv hybrid;
  RbCv naive;
  std::vector<GroupSummary> groups;
  std::size_t truth_replicates_used = 0;
  std::size_t iterations_used = 0;
  std::size_t iterations_failed = 0;
};

/// Two-level study: truth MSE from R runs, then S estimation iterations each
/// producing naive and hybrid MSE estimates; RB/CV averaged within n groups.
RbCvResult rb_cv_study(const RbCvConfig& cfg);

/// Group means of per-area RB/CV values.
std::vector<GroupSummary> summarize_groups(const ScenarioConfig& cfg, const RbCv& hybrid, const RbCv& naive);

}  // namespace sveb::sim
