#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sveb/bandwidth.hpp"
#include "sveb/family.hpp"
#include "sveb/local_fit.hpp"

namespace sveb {

struct BootstrapConfig {
  /// Replicate count B (>= 2).
  int replicates = 100;
  std::uint64_t seed = 20240101;
  /// Re-run bandwidth selection inside every replicate instead of holding b fixed.
  bool refit_bandwidth = false;
  /// Search used when refit_bandwidth is set; defaults to BandwidthSearch::defaults.
  std::optional<BandwidthSearch> search;
  FitOptions fit;
  /// Threads over replicates; 0 means default_workers().
  unsigned workers = 0;
  /// Abort when more than this fraction of replicates fail.
  double max_failure_fraction = 0.10;

  void validate() const;
};

/// Produces the bootstrap fit phi^s from a bootstrap data set.
using Refitter = std::function<SvFit(std::span<const AreaRecord>)>;

/// Refit with fit_all at fit.bandwidth, or with full bandwidth re-selection
/// when cfg.refit_bandwidth is set.
Refitter standard_refitter(const FamilySpec& spec, double bandwidth, const BootstrapConfig& cfg);

/// Copy of `data` with y replaced by a draw from the fitted model for every
/// sampled area. Area i of replicate s uses RandomStream(seed, {s, i}).
std::vector<AreaRecord> bootstrap_dataset(const FamilySpec& spec, const SvFit& fit,
                                          std::span<const AreaRecord> data, std::uint64_t seed,
                                          std::uint64_t replicate);

/// Per-replicate quantities, indexed like the input data (NaN for
/// non-sampled positions).
struct BootstrapReplicate {
  bool ok = false;
  std::string failure;
  std::vector<double> y;
  std::vector<double> r1;             // R1(phi^s(u_i))
  std::vector<double> mu_hat;         // mu_tilde(y^s, phi^s(u_i))
  std::vector<double> mu_plugin;      // mu_tilde(y^s, phi_hat(u_i))
  std::size_t area_failures = 0;
};

struct BootstrapRun {
  std::vector<BootstrapReplicate> replicates;
  [[nodiscard]] std::size_t used() const;
  [[nodiscard]] std::size_t failed() const;
};

/// Draw and refit all B replicates. Replicates run in parallel; each is a
/// pure function of (seed, s) so results are identical for any worker count.
/// Throws NumericalFailure when too many replicates fail.
BootstrapRun run_bootstrap(const FamilySpec& spec, const SvFit& fit, std::span<const AreaRecord> data,
                           const BootstrapConfig& cfg, const Refitter& refit = {});

/// R1 at the plug-in phi_hat(u_i), per area (NaN for non-sampled).
std::vector<double> naive_mse(const FamilySpec& spec, const SvFit& fit, std::span<const AreaRecord> data);

struct HybridMse {
  std::vector<double> value;       // max(raw, r2)
  std::vector<double> raw;         // 2 R1(phi_hat) - mean R1(phi^s) + r2
  std::vector<double> naive;       // R1(phi_hat)
  std::vector<double> mean_r1_boot;
  std::vector<double> r2;          // mean (mu_tilde(y^s, phi^s) - mu_tilde(y^s, phi_hat))^2
  std::vector<bool> truncated;
  std::size_t replicates_used = 0;
  std::size_t replicates_failed = 0;
};

HybridMse hybrid_mse(const FamilySpec& spec, const SvFit& fit, std::span<const AreaRecord> data,
                     const BootstrapRun& run);
HybridMse hybrid_mse(const FamilySpec& spec, const SvFit& fit, std::span<const AreaRecord> data,
                     const BootstrapConfig& cfg, const Refitter& refit = {});

/// c_i = n_i / sum_k n_k over sampled areas, 0 elsewhere.
std::vector<double> default_benchmark_weights(std::span<const AreaRecord> data);

/// Throws InvalidInput unless c_i >= 0 and |sum c - 1| <= 1e-10.
void validate_benchmark_weights(std::span<const double> c);

/// mu_hat_i + omega_i sum_k c_k (y_k - mu_hat_k), omega_i = c_i / sum c_k^2.
/// Positions with c_k = 0 do not enter the sum (their y may be NaN).
std::vector<double> benchmark_estimates(std::span<const double> mu_hat, std::span<const double> y,
                                        std::span<const double> c);

struct ExcessMse {
  std::vector<double> value;
  std::vector<bool> negative;
};

ExcessMse excess_mse(const SvFit& fit, std::span<const AreaRecord> data, std::span<const double> c,
                     const BootstrapRun& run);
ExcessMse excess_mse(const FamilySpec& spec, const SvFit& fit, std::span<const AreaRecord> data,
                     std::span<const double> c, const BootstrapConfig& cfg, const Refitter& refit = {});

struct NonsampledPrediction {
  double mean = 0.0;
  LocalFit fit;  // the area-excluded local fit at u_j
};

/// psi'(x_j' beta_(-j)(u_j)) from the local fit anchored at u_j without area j.
NonsampledPrediction predict_nonsampled(const FamilySpec& spec, std::size_t j, std::span<const AreaRecord> data,
                                        const KernelConfig& kernel,
                                        const std::optional<HyperParams>& init = std::nullopt,
                                        const FitOptions& opts = {});

/// Re-predicts m_hat_j from a bootstrap data set.
using Repredictor = std::function<double(std::span<const AreaRecord>)>;

struct NonsampledMse {
  double value = 0.0;     // max(raw, variability)
  double raw = 0.0;       // leading + variability + cross
  double leading = 0.0;   // Q(m_hat) / (nu_hat - v2) at phi_hat_(-j)(u_j)
  double variability = 0.0;  // mean (m^s - m_hat)^2
  double cross = 0.0;        // 2 mean (m^s - m_hat)(m_hat - mu^s)
  bool truncated = false;
  std::size_t replicates_used = 0;
  std::size_t replicates_failed = 0;
};

/// Bootstrap MSE of the non-sampled prediction for area j. Bootstrap worlds
/// draw y^s for sampled areas from `fit` (same streams as run_bootstrap) and
/// mu^s_j from the prior at phi_hat_(-j)(u_j).
NonsampledMse nonsampled_mse(const FamilySpec& spec, std::size_t j, std::span<const AreaRecord> data,
                             const SvFit& fit, const KernelConfig& kernel, const BootstrapConfig& cfg,
                             const Repredictor& repredict = {});

}  // namespace sveb
