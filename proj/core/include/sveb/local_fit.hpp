#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sveb/family.hpp"

namespace sveb {

/// Gaussian kernel bandwidth, in coordinate units.
struct KernelConfig {
  double bandwidth = 1.0;
};

/// exp(-d^2 / (2 b^2)).
double kernel_weight(double d, const KernelConfig& cfg);

/// Bounds applied by every fitter. Hitting either sets FitDiagnostics::at_bound.
inline constexpr double kMinRandomEffectVariance = 1e-8;  // gaussian A floor, i.e. nu <= 1e8
inline constexpr double kMaxPrecision = 1e8;
inline constexpr double kMinPrecision = 1e-6;

struct FitOptions {
  int max_iterations = 500;
  /// Stop when |objective increment| <= rel_tol * max(1, |objective|) ...
  double rel_tol = 1e-8;
  /// ... or the sup-norm change of (beta, log nu) is below param_tol.
  double param_tol = 1e-7;
  /// Threads for fit_all; 0 means default_workers().
  unsigned workers = 0;
};

struct FitDiagnostics {
  int iterations = 0;
  double objective = 0.0;
  double last_increment = 0.0;
  bool converged = false;
  /// nu reached its cap/floor (gaussian: A reached its floor).
  bool at_bound = false;
  /// The fit raised; params then hold the warm start.
  bool failed = false;
  std::string message;
};

struct LocalFit {
  HyperParams params;
  FitDiagnostics diagnostics;
};

/// Per-area local fits at one bandwidth. `areas` is indexed like the input
/// data; non-sampled positions are empty.
struct SvFit {
  FamilySpec spec;
  double bandwidth = 0.0;
  HyperParams global;
  std::vector<std::optional<LocalFit>> areas;

  [[nodiscard]] const HyperParams& params(std::size_t i) const;
  [[nodiscard]] std::size_t failed_count() const;
};

/// Kernel weights of every sampled record relative to `anchor`; zero for
/// non-sampled records and for `exclude`.
std::vector<double> local_weights(std::span<const AreaRecord> data, const Coord& anchor, const KernelConfig& cfg,
                                  std::optional<std::size_t> exclude = std::nullopt);

/// sum_k w_k { C(nu, m_k) - C(n_k + nu, mu_tilde_k) } over sampled k.
double weighted_loglik(const FamilySpec& spec, const HyperParams& phi, std::span<const AreaRecord> data,
                       std::span<const double> weights);

/// The locally weighted marginal log-likelihood anchored at area `anchor`.
double local_loglik(const FamilySpec& spec, const HyperParams& phi, std::size_t anchor,
                    std::span<const AreaRecord> data, const KernelConfig& cfg);

/// Fisher scoring on (beta, A), step-halved when the objective would drop.
LocalFit fit_weighted_gaussian(std::span<const AreaRecord> data, std::span<const double> weights,
                               const HyperParams& init, const FitOptions& opts = {});
/// EM with a Newton M-step in (beta, log nu); E-step uses the gamma posterior.
LocalFit fit_weighted_poisson_gamma(std::span<const AreaRecord> data, std::span<const double> weights,
                                    const HyperParams& init, const FitOptions& opts = {});
/// EM with a Newton M-step in (beta, log nu); E-step uses the beta posterior.
LocalFit fit_weighted_binomial_beta(std::span<const AreaRecord> data, std::span<const double> weights,
                                    const HyperParams& init, const FitOptions& opts = {});
/// Family dispatch over the three weighted fitters.
LocalFit fit_weighted(const FamilySpec& spec, std::span<const AreaRecord> data, std::span<const double> weights,
                      const HyperParams& init, const FitOptions& opts = {});

/// Deterministic starting point: link of the weighted mean for the
/// intercept, moment-matched nu.
HyperParams initial_params(const FamilySpec& spec, std::span<const AreaRecord> data,
                           std::span<const double> weights);

LocalFit fit_local_gaussian(std::size_t anchor, std::span<const AreaRecord> data, const KernelConfig& cfg,
                            const HyperParams& init, const FitOptions& opts = {});
LocalFit fit_local_poisson_gamma(std::size_t anchor, std::span<const AreaRecord> data, const KernelConfig& cfg,
                                 const HyperParams& init, const FitOptions& opts = {});
LocalFit fit_local_binomial_beta(std::size_t anchor, std::span<const AreaRecord> data, const KernelConfig& cfg,
                                 const HyperParams& init, const FitOptions& opts = {});
LocalFit fit_local(const FamilySpec& spec, std::size_t anchor, std::span<const AreaRecord> data,
                   const KernelConfig& cfg, const HyperParams& init, const FitOptions& opts = {});

/// Local fit anchored at area j with area j's own term removed. Without an
/// explicit init the warm start is fit_constant on the data minus j.
LocalFit fit_local_loo(const FamilySpec& spec, std::size_t j, std::span<const AreaRecord> data,
                       const KernelConfig& cfg, const std::optional<HyperParams>& init = std::nullopt,
                       const FitOptions& opts = {});

/// Spatially constant maximum likelihood over all sampled areas.
LocalFit fit_constant(const FamilySpec& spec, std::span<const AreaRecord> data, const FitOptions& opts = {});

/// One local fit per sampled area, warm-started from fit_constant. A failing
/// area is recorded in its diagnostics; only all-areas-failed throws.
SvFit fit_all(const FamilySpec& spec, std::span<const AreaRecord> data, const KernelConfig& cfg,
              const FitOptions& opts = {});

/// Same as fit_all but reuses a precomputed global fit as the warm start.
SvFit fit_all(const FamilySpec& spec, std::span<const AreaRecord> data, const KernelConfig& cfg,
              const HyperParams& global, const FitOptions& opts = {});

/// Number of coefficients p; throws if sampled records disagree.
std::size_t design_width(std::span<const AreaRecord> data);

}  // namespace sveb
