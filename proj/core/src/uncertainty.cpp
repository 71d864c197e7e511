#include "sveb/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sveb/errors.hpp"
#include "sveb/parallel.hpp"
#include "sveb/summation.hpp"

namespace sveb {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

void BootstrapConfig::validate() const {
  if (replicates < 2) throw InvalidInput("bootstrap: need at least 2 replicates");
  if (!(max_failure_fraction >= 0.0 && max_failure_fraction < 1.0)) {
    throw InvalidInput("bootstrap: max_failure_fraction must lie in [0, 1)");
  }
  if (search) search->validate();
}

Refitter standard_refitter(const FamilySpec& spec, double bandwidth, const BootstrapConfig& cfg) {
  FitOptions opts = cfg.fit;
  opts.workers = 1;
  if (!cfg.refit_bandwidth) {
    return [spec, bandwidth, opts](std::span<const AreaRecord> boot) {
      return fit_all(spec, boot, KernelConfig{bandwidth}, opts);
    };
  }
  return [spec, opts, search = cfg.search](std::span<const AreaRecord> boot) {
    const LocalFit global = fit_constant(spec, boot, opts);
    const BandwidthSearch s = search ? *search : BandwidthSearch::defaults(boot);
    const BandwidthSelection sel = select_bandwidth(spec, boot, s, global.params, opts);
    return fit_all(spec, boot, KernelConfig{sel.bandwidth}, global.params, opts);
  };
}

std::vector<AreaRecord> bootstrap_dataset(const FamilySpec& spec, const SvFit& fit,
                                          std::span<const AreaRecord> data, std::uint64_t seed,
                                          std::uint64_t replicate) {
  std::vector<AreaRecord> boot(data.begin(), data.end());
  for (std::size_t i = 0; i < boot.size(); ++i) {
    if (!boot[i].sampled) continue;
    RandomStream rng(seed, {replicate, i});
    boot[i].y = sample_area(spec, fit.params(i), boot[i].x, boot[i].n, rng).y;
  }
  return boot;
}

std::size_t BootstrapRun::used() const {
  return static_cast<std::size_t>(
      std::count_if(replicates.begin(), replicates.end(), [](const auto& r) { return r.ok; }));
}

std::size_t BootstrapRun::failed() const { return replicates.size() - used(); }

BootstrapRun run_bootstrap(const FamilySpec& spec, const SvFit& fit, std::span<const AreaRecord> data,
                           const BootstrapConfig& cfg, const Refitter& refit) {
  cfg.validate();
  if (fit.areas.size() != data.size()) throw InvalidInput("bootstrap: fit does not match data");
  const Refitter refitter = refit ? refit : standard_refitter(spec, fit.bandwidth, cfg);
  const std::size_t N = data.size();

  BootstrapRun run;
  run.replicates.resize(static_cast<std::size_t>(cfg.replicates));
  parallel_for(run.replicates.size(), cfg.workers, [&](std::size_t s) {
    BootstrapReplicate& rep = run.replicates[s];
    const auto boot = bootstrap_dataset(spec, fit, data, cfg.seed, s);
    rep.y.assign(N, kNaN);
    rep.r1.assign(N, kNaN);
    rep.mu_hat.assign(N, kNaN);
    rep.mu_plugin.assign(N, kNaN);
    SvFit boot_fit;
    try {
      boot_fit = refitter(boot);
    } catch (const NumericalFailure& e) {
      rep.ok = false;
      rep.failure = e.what();
      return;
    }
    for (std::size_t i = 0; i < N; ++i) {
      if (!data[i].sampled) continue;
      const auto& rec = boot[i];
      const HyperParams& phi_s = boot_fit.params(i);
      const HyperParams& phi_hat = fit.params(i);
      rep.y[i] = rec.y;
      rep.r1[i] = r1(spec, rec.n, phi_s, rec.x);
      rep.mu_hat[i] = bayes_estimate(spec, rec.y, rec.n, phi_s, rec.x);
      rep.mu_plugin[i] = bayes_estimate(spec, rec.y, rec.n, phi_hat, rec.x);
    }
    rep.area_failures = boot_fit.failed_count();
    rep.ok = true;
  });

  const std::size_t failed = run.failed();
  if (static_cast<double>(failed) > cfg.max_failure_fraction * static_cast<double>(run.replicates.size())) {
    std::string first;
    for (const auto& r : run.replicates) {
      if (!r.ok) {
        first = r.failure;
        break;
      }
    }
    throw NumericalFailure("bootstrap: " + std::to_string(failed) + " of " +
                           std::to_string(run.replicates.size()) + " replicates failed; first: " + first);
  }
  return run;
}

std::vector<double> naive_mse(const FamilySpec& spec, const SvFit& fit, std::span<const AreaRecord> data) {
  if (fit.areas.size() != data.size()) throw InvalidInput("naive_mse: fit does not match data");
  std::vector<double> out(data.size(), kNaN);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data[i].sampled) continue;
    out[i] = r1(spec, data[i].n, fit.params(i), data[i].x);
  }
  return out;
}

HybridMse hybrid_mse(const FamilySpec& spec, const SvFit& fit, std::span<const AreaRecord> data,
                     const BootstrapRun& run) {
  const std::size_t N = data.size();
  HybridMse out;
  out.naive = naive_mse(spec, fit, data);
  out.value.assign(N, kNaN);
  out.raw.assign(N, kNaN);
  out.mean_r1_boot.assign(N, kNaN);
  out.r2.assign(N, kNaN);
  out.truncated.assign(N, false);
  out.replicates_used = run.used();
  out.replicates_failed = run.failed();
  if (out.replicates_used == 0) throw NumericalFailure("hybrid_mse: no usable bootstrap replicates");
  const double B = static_cast<double>(out.replicates_used);

  for (std::size_t i = 0; i < N; ++i) {
    if (!data[i].sampled) continue;
    const double r1_hat = out.naive[i];
    // Accumulate deviations from the plug-in value so that phi^s == phi_hat
    // reproduces R1(phi_hat) exactly.
    CompensatedSum dev;
    CompensatedSum sq;
    for (const auto& rep : run.replicates) {
      if (!rep.ok) continue;
      dev.add(rep.r1[i] - r1_hat);
      const double d = rep.mu_hat[i] - rep.mu_plugin[i];
      sq.add(d * d);
    }
    const double mean_dev = dev.value() / B;
    const double r2 = sq.value() / B;
    out.mean_r1_boot[i] = r1_hat + mean_dev;
    out.r2[i] = r2;
    out.raw[i] = r1_hat - mean_dev + r2;
    out.truncated[i] = out.raw[i] < r2;
    out.value[i] = out.truncated[i] ? r2 : out.raw[i];
  }
  return out;
}

HybridMse hybrid_mse(const FamilySpec& spec, const SvFit& fit, std::span<const AreaRecord> data,
                     const BootstrapConfig& cfg, const Refitter& refit) {
  return hybrid_mse(spec, fit, data, run_bootstrap(spec, fit, data, cfg, refit));
}

std::vector<double> default_benchmark_weights(std::span<const AreaRecord> data) {
  double total = 0.0;
  for (const auto& rec : data) {
    if (rec.sampled) total += rec.n;
  }
  if (!(total > 0.0)) throw InvalidInput("benchmark weights: no sampled areas with positive n");
  std::vector<double> c(data.size(), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].sampled) c[i] = data[i].n / total;
  }
  return c;
}

void validate_benchmark_weights(std::span<const double> c) {
  CompensatedSum total;
  for (double v : c) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("benchmark weights must be finite and >= 0");
    total.add(v);
  }
  if (std::fabs(total.value() - 1.0) > 1e-10) throw InvalidInput("benchmark weights must sum to 1");
}

std::vector<double> benchmark_estimates(std::span<const double> mu_hat, std::span<const double> y,
                                        std::span<const double> c) {
  if (mu_hat.size() != y.size() || c.size() != y.size()) throw InvalidInput("benchmark: length mismatch");
  validate_benchmark_weights(c);
  CompensatedSum gap;
  CompensatedSum c2;
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (c[k] == 0.0) continue;
    gap.add(c[k] * y[k]);
    gap.add(-c[k] * mu_hat[k]);
    c2.add(c[k] * c[k]);
  }
  const double shift = gap.value() / c2.value();
  std::vector<double> out(mu_hat.begin(), mu_hat.end());
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c[i] != 0.0) out[i] += c[i] * shift;
  }
  return out;
}

ExcessMse excess_mse(const SvFit& fit, std::span<const AreaRecord> data, std::span<const double> c,
                     const BootstrapRun& run) {
  const std::size_t N = data.size();
  if (c.size() != N || fit.areas.size() != N) throw InvalidInput("excess_mse: length mismatch");
  validate_benchmark_weights(c);
  for (std::size_t i = 0; i < N; ++i) {
    if (c[i] != 0.0 && !data[i].sampled) throw InvalidInput("excess_mse: non-sampled area has a benchmark weight");
  }
  const std::size_t used = run.used();
  if (used == 0) throw NumericalFailure("excess_mse: no usable bootstrap replicates");

  std::vector<CompensatedSum> sq(N), cross(N);
  for (const auto& rep : run.replicates) {
    if (!rep.ok) continue;
    const auto bench = benchmark_estimates(rep.mu_hat, rep.y, c);
    for (std::size_t i = 0; i < N; ++i) {
      if (!data[i].sampled) continue;
      const double d = bench[i] - rep.mu_hat[i];
      sq[i].add(d * d);
      cross[i].add(d * (rep.mu_hat[i] - rep.mu_plugin[i]));
    }
  }
  ExcessMse out;
  out.value.assign(N, kNaN);
  out.negative.assign(N, false);
  const double B = static_cast<double>(used);
  for (std::size_t i = 0; i < N; ++i) {
    if (!data[i].sampled) continue;
    out.value[i] = sq[i].value() / B + 2.0 * cross[i].value() / B;
    out.negative[i] = out.value[i] < 0.0;
  }
  return out;
}

ExcessMse excess_mse(const FamilySpec& spec, const SvFit& fit, std::span<const AreaRecord> data,
                     std::span<const double> c, const BootstrapConfig& cfg, const Refitter& refit) {
  return excess_mse(fit, data, c, run_bootstrap(spec, fit, data, cfg, refit));
}

NonsampledPrediction predict_nonsampled(const FamilySpec& spec, std::size_t j, std::span<const AreaRecord> data,
                                        const KernelConfig& kernel, const std::optional<HyperParams>& init,
                                        const FitOptions& opts) {
  if (j >= data.size()) throw InvalidInput("predict_nonsampled: area index out of range");
  try {
    NonsampledPrediction out;
    out.fit = fit_local_loo(spec, j, data, kernel, init, opts);
    out.mean = mean_link(spec, linear_predictor(out.fit.params.beta, data[j].x));
    return out;
  } catch (const NumericalFailure& e) {
    throw NumericalFailure("prediction for area '" + data[j].id + "' failed: " + e.what());
  }
}

NonsampledMse nonsampled_mse(const FamilySpec& spec, std::size_t j, std::span<const AreaRecord> data,
                             const SvFit& fit, const KernelConfig& kernel, const BootstrapConfig& cfg,
                             const Repredictor& repredict) {
  cfg.validate();
  const NonsampledPrediction pred = predict_nonsampled(spec, j, data, kernel, std::nullopt, cfg.fit);
  const double m_hat = pred.mean;
  const double nu_hat = pred.fit.params.nu;

  FitOptions inner = cfg.fit;
  inner.workers = 1;
  const Repredictor predictor = repredict ? repredict : Repredictor([&](std::span<const AreaRecord> boot) {
    return predict_nonsampled(spec, j, boot, kernel, std::nullopt, inner).mean;
  });

  struct Slot {
    bool ok = false;
    double m_boot = 0.0;
    double mu_boot = 0.0;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(cfg.replicates));
  parallel_for(slots.size(), cfg.workers, [&](std::size_t s) {
    RandomStream truth_rng(cfg.seed, {s, data.size() + j});
    slots[s].mu_boot = sample_prior_mean(spec, nu_hat, m_hat, truth_rng);
    const auto boot = bootstrap_dataset(spec, fit, data, cfg.seed, s);
    try {
      slots[s].m_boot = predictor(boot);
      slots[s].ok = std::isfinite(slots[s].m_boot);
    } catch (const NumericalFailure&) {
      slots[s].ok = false;
    }
  });

  NonsampledMse out;
  CompensatedSum var, cross;
  for (const auto& slot : slots) {
    if (!slot.ok) {
      ++out.replicates_failed;
      continue;
    }
    ++out.replicates_used;
    const double d = slot.m_boot - m_hat;
    var.add(d * d);
    cross.add(d * (m_hat - slot.mu_boot));
  }
  if (static_cast<double>(out.replicates_failed) > cfg.max_failure_fraction * static_cast<double>(slots.size())) {
    throw NumericalFailure("nonsampled_mse: too many bootstrap replicates failed for area '" + data[j].id + "'");
  }
  const double B = static_cast<double>(out.replicates_used);
  out.leading = prior_variance(spec, nu_hat, m_hat);
  out.variability = var.value() / B;
  out.cross = 2.0 * cross.value() / B;
  out.raw = out.leading + out.variability + out.cross;
  out.truncated = out.raw < out.variability;
  out.value = out.truncated ? out.variability : out.raw;
  return out;
}

}  // namespace sveb
