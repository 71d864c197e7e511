#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sveb/family.hpp"
#include "sveb/local_fit.hpp"

namespace sveb {

struct Evaluation {
  double x = 0.0;
  double value = 0.0;
};

struct GoldenSectionResult {
  double minimizer = 0.0;
  /// Every (x, f(x)) pair in evaluation order.
  std::vector<Evaluation> evaluations;
  /// Final bracket.
  double lo = 0.0;
  double hi = 0.0;
};

/// Golden-section minimization of f over [lo, hi].
///
/// Shrinks the bracket by the inverse golden ratio per iteration until its
/// width is at most tol, then returns the midpoint of the final bracket.
/// For unimodal f the minimizer is within tol of the true one and at most
/// ceil(log((hi - lo) / tol) / log(1 / 0.618...)) + 2 evaluations are made.
/// For multimodal f a local minimizer is returned. Never evaluates outside
/// [lo, hi].
GoldenSectionResult golden_section(const std::function<double(double)>& f, double lo, double hi, double tol);

/// Theoretical evaluation budget of golden_section.
int golden_section_max_evaluations(double lo, double hi, double tol);

struct BandwidthSearch {
  double lo = 0.01;
  double hi = 0.0;
  double tol = 0.0;

  /// lo = 0.01, hi = 2 * max_{i,k} |u_i - u_k|^2, tol = tol_fraction * hi.
  static BandwidthSearch defaults(std::span<const AreaRecord> data, double tol_fraction = 1e-3);
  void validate() const;
};

struct CvEvaluation {
  double bandwidth = 0.0;
  /// +inf when some leave-one-out fit was infeasible.
  double cv = 0.0;
  std::string failure;
};

struct BandwidthSelection {
  double bandwidth = 0.0;
  std::vector<CvEvaluation> evaluations;
};

/// sum_i (y_i - psi'(x_i' beta_(-i)(u_i)))^2 over sampled areas, each
/// beta_(-i) from fit_local_loo warm-started at `warm_start` (fit_constant
/// of the full data when omitted). Throws NumericalFailure naming the area
/// whose leave-one-out fit is infeasible.
double cv_criterion(const FamilySpec& spec, std::span<const AreaRecord> data, double bandwidth,
                    const std::optional<HyperParams>& warm_start = std::nullopt, const FitOptions& opts = {});

/// golden_section over b -> cv_criterion(b). Bandwidths whose CV cannot be
/// evaluated score +inf and are logged with the reason.
BandwidthSelection select_bandwidth(const FamilySpec& spec, std::span<const AreaRecord> data,
                                    const BandwidthSearch& search,
                                    const std::optional<HyperParams>& warm_start = std::nullopt,
                                    const FitOptions& opts = {});

/// CV evaluated on an explicit grid (plot data).
std::vector<CvEvaluation> cv_curve(const FamilySpec& spec, std::span<const AreaRecord> data,
                                   std::span<const double> bandwidths, const FitOptions& opts = {});

}  // namespace sveb
