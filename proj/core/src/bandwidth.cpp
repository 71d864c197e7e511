#include "sveb/bandwidth.hpp"

#include <cmath>
#include <limits>

#include "sveb/errors.hpp"
#include "sveb/parallel.hpp"

namespace sveb {
namespace {

const double kInvPhi = (std::sqrt(5.0) - 1.0) / 2.0;

}  // namespace

int golden_section_max_evaluations(double lo, double hi, double tol) {
  if (hi - lo <= tol) return 2;
  return static_cast<int>(std::ceil(std::log((hi - lo) / tol) / std::log(1.0 / kInvPhi))) + 2;
}

GoldenSectionResult golden_section(const std::function<double(double)>& f, double lo, double hi, double tol) {
  if (!(lo < hi)) throw InvalidInput("golden_section: need lo < hi");
  if (!(tol > 0.0)) throw InvalidInput("golden_section: tol must be positive");

  GoldenSectionResult out;
  auto eval = [&](double x) {
    const double v = f(x);
    out.evaluations.push_back({x, v});
    return v;
  };
  // Interior points moving toward hi when both are infeasible (+inf) keeps
  // the search away from bandwidths too small to fit.
  auto left_is_better = [](double fc, double fd) {
    if (std::isinf(fc) && std::isinf(fd) && fc > 0 && fd > 0) return false;
    return fc <= fd;
  };

  double a = lo;
  double b = hi;
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double fc = eval(c);
  double fd = eval(d);
  for (;;) {
    if (left_is_better(fc, fd)) {
      b = d;
      if (b - a <= tol) break;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = eval(c);
    } else {
      a = c;
      if (b - a <= tol) break;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = eval(d);
    }
  }
  out.lo = a;
  out.hi = b;
  out.minimizer = 0.5 * (a + b);
  return out;
}

BandwidthSearch BandwidthSearch::defaults(std::span<const AreaRecord> data, double tol_fraction) {
  double max_d2 = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data[i].sampled) continue;
    for (std::size_t k = i + 1; k < data.size(); ++k) {
      if (!data[k].sampled) continue;
      const double d = distance(data[i].u, data[k].u);
      max_d2 = std::max(max_d2, d * d);
    }
  }
  BandwidthSearch s;
  s.hi = 2.0 * max_d2;
  s.tol = tol_fraction * s.hi;
  return s;
}

void BandwidthSearch::validate() const {
  if (!(lo > 0.0)) throw InvalidInput("bandwidth search: lo must be positive");
  if (!(lo < hi)) throw InvalidInput("bandwidth search: need lo < hi (are all coordinates identical?)");
  if (!(tol > 0.0)) throw InvalidInput("bandwidth search: tol must be positive");
}

double cv_criterion(const FamilySpec& spec, std::span<const AreaRecord> data, double bandwidth,
                    const std::optional<HyperParams>& warm_start, const FitOptions& opts) {
  if (!(bandwidth > 0.0)) throw InvalidInput("cv_criterion: bandwidth must be positive");
  const HyperParams start = warm_start ? *warm_start : fit_constant(spec, data, opts).params;
  const KernelConfig cfg{bandwidth};

  std::vector<std::size_t> sampled;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].sampled) sampled.push_back(i);
  }
  std::vector<double> sq(sampled.size(), 0.0);
  parallel_for(sampled.size(), opts.workers, [&](std::size_t s) {
    const std::size_t i = sampled[s];
    try {
      const LocalFit fit = fit_local_loo(spec, i, data, cfg, start, opts);
      const double pred = mean_link(spec, linear_predictor(fit.params.beta, data[i].x));
      const double r = data[i].y - pred;
      sq[s] = r * r;
    } catch (const NumericalFailure& e) {
      throw NumericalFailure("leave-one-out fit for area '" + data[i].id + "' failed at bandwidth " +
                             std::to_string(bandwidth) + ": " + e.what());
    }
  });
  double total = 0.0;
  for (double v : sq) total += v;
  return total;
}

BandwidthSelection select_bandwidth(const FamilySpec& spec, std::span<const AreaRecord> data,
                                    const BandwidthSearch& search, const std::optional<HyperParams>& warm_start,
                                    const FitOptions& opts) {
  search.validate();
  const HyperParams start = warm_start ? *warm_start : fit_constant(spec, data, opts).params;
  BandwidthSelection sel;
  auto objective = [&](double b) {
    CvEvaluation ev{b, 0.0, {}};
    try {
      ev.cv = cv_criterion(spec, data, b, start, opts);
    } catch (const NumericalFailure& e) {
      ev.cv = std::numeric_limits<double>::infinity();
      ev.failure = e.what();
    }
    sel.evaluations.push_back(ev);
    return ev.cv;
  };
  const GoldenSectionResult gs = golden_section(objective, search.lo, search.hi, search.tol);
  sel.bandwidth = gs.minimizer;
  return sel;
}

std::vector<CvEvaluation> cv_curve(const FamilySpec& spec, std::span<const AreaRecord> data,
                                   std::span<const double> bandwidths, const FitOptions& opts) {
  const HyperParams start = fit_constant(spec, data, opts).params;
  std::vector<CvEvaluation> out;
  out.reserve(bandwidths.size());
  for (double b : bandwidths) {
    CvEvaluation ev{b, 0.0, {}};
    try {
      ev.cv = cv_criterion(spec, data, b, start, opts);
    } catch (const NumericalFailure& e) {
      ev.cv = std::numeric_limits<double>::infinity();
      ev.failure = e.what();
    }
    out.push_back(ev);
  }
  return out;
}

}  // namespace sveb
