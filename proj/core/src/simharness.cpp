#include "sveb/simharness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>

#include "sveb/bandwidth.hpp"
#include "sveb/errors.hpp"
#include "sveb/parallel.hpp"
#include "sveb/summation.hpp"

namespace sveb::sim {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// stream ids under the study seed
constexpr std::uint64_t kDesignStream = 0xD35164;
constexpr std::uint64_t kReplicateStream = 1;
constexpr std::uint64_t kIterationStream = 2;
constexpr std::uint64_t kBootSeedStream = 3;
constexpr std::uint64_t kRedrawStream = 4;

std::size_t allowed_failures(std::size_t total, double fraction) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + 1e-9));
}

}  // namespace

namespace detail {
const std::vector<double>& scoring_truth(const SimDataset& ds) { return ds.truth_; }
}  // namespace detail

std::string_view to_string(Scenario s) { return s == Scenario::varying ? "varying" : "constant"; }

Scenario parse_scenario(std::string_view name) {
  if (name == "varying" || name == "I" || name == "1") return Scenario::varying;
  if (name == "constant" || name == "II" || name == "2") return Scenario::constant;
  throw InvalidInput("unknown scenario '" + std::string(name) + "' (expected varying or constant)");
}

void ScenarioConfig::validate() const {
  if (sampled < 3) throw InvalidInput("simulation: need at least 3 sampled areas");
  if (n_groups.empty()) throw InvalidInput("simulation: n_groups is empty");
  if (n_groups.size() > sampled) throw InvalidInput("simulation: more n groups than sampled areas");
  for (double n : n_groups) {
    if (!(n > 0.0) || !std::isfinite(n)) throw InvalidInput("simulation: n values must be positive");
    if (family.id == FamilyId::binomial_beta && std::fabs(n - std::round(n)) > 1e-8) {
      throw InvalidInput("simulation: binomial n must be an integer");
    }
  }
  if (!(nu_scale > 0.0)) throw InvalidInput("simulation: nu_scale must be positive");
  if (replications < 1) throw InvalidInput("simulation: replications must be >= 1");
  if (!reselect_bandwidth && !(fixed_bandwidth && *fixed_bandwidth > 0.0)) {
    throw InvalidInput("simulation: fixed bandwidth required when not re-selecting");
  }
  if (!(cv_tol_fraction > 0.0 && cv_tol_fraction < 1.0)) {
    throw InvalidInput("simulation: cv_tol_fraction must lie in (0, 1)");
  }
  if (!(max_failure_fraction >= 0.0 && max_failure_fraction < 1.0)) {
    throw InvalidInput("simulation: max_failure_fraction must lie in [0, 1)");
  }
}

std::size_t ScenarioConfig::group_of(std::size_t area) const {
  const std::size_t total = total_areas();
  const std::size_t g = n_groups.size();
  return std::min(g - 1, area * g / total);
}

double ScenarioConfig::n_for(std::size_t area) const { return n_groups[group_of(area)]; }

Design draw_design(const ScenarioConfig& cfg, RandomStream& rng) {
  const std::size_t N = cfg.total_areas();
  Design d;
  d.u.resize(N);
  d.covariate.resize(N);
  d.n.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    d.u[i].u1 = rng.uniform();
    d.u[i].u2 = rng.uniform();
    d.covariate[i] = 2.0 * rng.uniform() - 1.0;
    d.n[i] = cfg.n_for(i);
  }
  return d;
}

Design replicate_design(const ScenarioConfig& cfg, std::size_t replicate) {
  if (cfg.redraw_design) {
    RandomStream rng(cfg.seed, {kRedrawStream, replicate});
    return draw_design(cfg, rng);
  }
  RandomStream rng(cfg.seed, {kDesignStream});
  return draw_design(cfg, rng);
}

HyperParams true_params(const ScenarioConfig& cfg, const Coord& u) {
  HyperParams phi;
  if (cfg.scenario == Scenario::varying) {
    phi.beta = {u.u1 - u.u2 - 1.0, std::hypot(u.u1, u.u2)};
    phi.nu = cfg.nu_scale * std::exp(u.u1 + u.u2 - 1.0);
  } else {
    phi.beta = {0.1, 0.7};
    phi.nu = 50.0;
  }
  return phi;
}

SimDataset::SimDataset(std::vector<AreaRecord> recs, std::vector<double> truth)
    : records(std::move(recs)), truth_(std::move(truth)) {}

SimDataset::SimDataset(const SimDataset& other) : records(other.records), truth_(other.truth_) {}

const std::vector<double>& SimDataset::truth() const {
  truth_reads_.fetch_add(1);
  return truth_;
}

SimDataset gen_scenario(const ScenarioConfig& cfg, const Design& design, RandomStream& rng) {
  const std::size_t N = cfg.total_areas();
  if (design.u.size() != N || design.covariate.size() != N || design.n.size() != N) {
    throw InvalidInput("gen_scenario: design size does not match the configuration");
  }
  std::vector<AreaRecord> recs(N);
  std::vector<double> mu(N);
  for (std::size_t i = 0; i < N; ++i) {
    AreaRecord& r = recs[i];
    r.id = "a" + std::to_string(i + 1);
    r.u = design.u[i];
    r.x = {1.0, design.covariate[i]};
    r.sampled = i < cfg.sampled;
    RandomStream area = rng.substream(i);
    const HyperParams phi = true_params(cfg, r.u);
    if (r.sampled) {
      const AreaDraw d = sample_area(cfg.family, phi, r.x, design.n[i], area);
      mu[i] = d.mu;
      r.y = d.y;
      r.n = design.n[i];
    } else {
      mu[i] = sample_prior_mean(cfg.family, phi.nu, prior_mean(cfg.family, phi, r.x), area);
      r.y = kNaN;
      r.n = 0.0;
    }
  }
  return SimDataset(std::move(recs), std::move(mu));
}

SimDataset gen_replicate(const ScenarioConfig& cfg, std::size_t replicate) {
  const Design design = replicate_design(cfg, replicate);
  RandomStream rng(cfg.seed, {kReplicateStream, replicate});
  return gen_scenario(cfg, design, rng);
}

Estimator sc_estimator(const ScenarioConfig& cfg) {
  return [spec = cfg.family, opts = cfg.fit](const SimDataset& ds) {
    FitOptions o = opts;
    o.workers = 1;
    const LocalFit global = fit_constant(spec, ds.records, o);
    std::vector<double> est(ds.records.size());
    for (std::size_t i = 0; i < est.size(); ++i) {
      const AreaRecord& r = ds.records[i];
      est[i] = r.sampled ? bayes_estimate(spec, r.y, r.n, global.params, r.x)
                         : prior_mean(spec, global.params, r.x);
    }
    return est;
  };
}

Estimator sv_estimator(const ScenarioConfig& cfg) {
  return [spec = cfg.family, opts = cfg.fit, reselect = cfg.reselect_bandwidth, fixed = cfg.fixed_bandwidth,
          tol_fraction = cfg.cv_tol_fraction](const SimDataset& ds) {
    FitOptions o = opts;
    o.workers = 1;
    const LocalFit global = fit_constant(spec, ds.records, o);
    double b = fixed.value_or(0.0);
    if (reselect) {
      const BandwidthSearch search = BandwidthSearch::defaults(ds.records, tol_fraction);
      b = select_bandwidth(spec, ds.records, search, global.params, o).bandwidth;
    }
    const KernelConfig kernel{b};
    const SvFit fit = fit_all(spec, ds.records, kernel, global.params, o);
    std::vector<double> est(ds.records.size());
    for (std::size_t i = 0; i < est.size(); ++i) {
      const AreaRecord& r = ds.records[i];
      if (r.sampled) {
        est[i] = bayes_estimate(spec, r.y, r.n, fit.params(i), r.x);
      } else {
        est[i] = predict_nonsampled(spec, i, ds.records, kernel, global.params, o).mean;
      }
    }
    return est;
  };
}

Estimator method_estimator(const ScenarioConfig& cfg, Method method) {
  return method == Method::sv ? sv_estimator(cfg) : sc_estimator(cfg);
}

MseTable simulate_mse(const ScenarioConfig& cfg, std::span<const Estimator> estimators) {
  cfg.validate();
  if (estimators.empty()) throw InvalidInput("simulate_mse: no estimators");
  const std::size_t R = static_cast<std::size_t>(cfg.replications);
  const std::size_t N = cfg.total_areas();
  const std::size_t E = estimators.size();

  struct Slot {
    bool ok = false;
    std::string failure;
    std::vector<std::vector<double>> sq;  // [e][i]
    std::size_t reads = 0;
  };
  std::vector<Slot> slots(R);
  parallel_for(R, cfg.workers, [&](std::size_t r) {
    Slot& slot = slots[r];
    const SimDataset ds = gen_replicate(cfg, r);
    const std::vector<double>& mu = detail::scoring_truth(ds);
    slot.sq.assign(E, std::vector<double>(N, 0.0));
    try {
      for (std::size_t e = 0; e < E; ++e) {
        const std::vector<double> est = estimators[e](ds);
        if (est.size() != N) throw InvalidInput("simulate_mse: estimator returned the wrong length");
        for (std::size_t i = 0; i < N; ++i) {
          if (!std::isfinite(est[i])) throw NumericalFailure("non-finite estimate at area " + std::to_string(i));
          const double d = est[i] - mu[i];
          slot.sq[e][i] = d * d;
        }
      }
      slot.ok = true;
    } catch (const NumericalFailure& ex) {
      slot.failure = ex.what();
    }
    slot.reads = ds.truth_reads();
  });

  MseTable out;
  std::vector<std::vector<CompensatedSum>> acc(E, std::vector<CompensatedSum>(N));
  std::string first_failure;
  for (const Slot& slot : slots) {
    out.truth_reads += slot.reads;
    if (!slot.ok) {
      ++out.replicates_failed;
      if (first_failure.empty()) first_failure = slot.failure;
      continue;
    }
    ++out.replicates_used;
    for (std::size_t e = 0; e < E; ++e) {
      for (std::size_t i = 0; i < N; ++i) acc[e][i].add(slot.sq[e][i]);
    }
  }
  if (out.replicates_used == 0 || out.replicates_failed > allowed_failures(R, cfg.max_failure_fraction)) {
    throw NumericalFailure("simulate_mse: " + std::to_string(out.replicates_failed) + " of " + std::to_string(R) +
                           " replicates failed; first: " + first_failure);
  }
  out.mse.assign(E, std::vector<double>(N, 0.0));
  const double used = static_cast<double>(out.replicates_used);
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t i = 0; i < N; ++i) out.mse[e][i] = acc[e][i].value() / used;
  }
  return out;
}

std::vector<double> simulate_mse(const ScenarioConfig& cfg, Method method) {
  const Estimator est = method_estimator(cfg, method);
  return simulate_mse(cfg, std::span<const Estimator>(&est, 1)).mse.front();
}

std::vector<std::optional<double>> relative_difference(std::span<const double> mse_sv,
                                                       std::span<const double> mse_sc) {
  if (mse_sv.size() != mse_sc.size()) throw InvalidInput("relative_difference: length mismatch");
  std::vector<std::optional<double>> out(mse_sv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(mse_sc[i] > 0.0)) continue;
    const double sc = std::sqrt(mse_sc[i]);
    out[i] = 100.0 * (std::sqrt(mse_sv[i]) - sc) / sc;
  }
  return out;
}

RbCv rb_cv(std::span<const double> true_mse, std::span<const std::vector<double>> estimates) {
  const std::size_t N = true_mse.size();
  if (estimates.empty()) throw InvalidInput("rb_cv: no estimates");
  RbCv out;
  out.rb.assign(N, kNaN);
  out.cv.assign(N, kNaN);
  for (std::size_t i = 0; i < N; ++i) {
    if (!(true_mse[i] > 0.0)) continue;
    CompensatedSum s1;
    CompensatedSum s2;
    std::size_t k = 0;
    for (const auto& est : estimates) {
      if (est.size() != N) throw InvalidInput("rb_cv: estimate length mismatch");
      if (!std::isfinite(est[i])) continue;
      const double rel = (est[i] - true_mse[i]) / true_mse[i];
      s1.add(rel);
      s2.add(rel * rel);
      ++k;
    }
    if (k == 0) continue;
    out.rb[i] = 100.0 * s1.value() / static_cast<double>(k);
    out.cv[i] = 100.0 * std::sqrt(s2.value() / static_cast<double>(k));
  }
  return out;
}

RbCvConfig RbCvConfig::table1(FamilySpec family, int R, int S, int B, std::uint64_t seed) {
  RbCvConfig c;
  c.scenario.family = family;
  c.scenario.sampled = 50;
  c.scenario.nonsampled = 0;
  c.scenario.n_groups = {10.0, 15.0, 20.0, 25.0, 30.0};
  c.scenario.scenario = Scenario::varying;
  c.scenario.nu_scale = 30.0;
  c.scenario.replications = R;
  c.scenario.seed = seed;
  c.iterations = S;
  c.bootstrap.replicates = B;
  return c;
}

std::vector<GroupSummary> summarize_groups(const ScenarioConfig& cfg, const RbCv& hybrid, const RbCv& naive) {
  const std::size_t G = cfg.n_groups.size();
  std::vector<GroupSummary> out(G);
  std::vector<std::size_t> count(G, 0);
  for (std::size_t i = 0; i < cfg.sampled; ++i) {
    if (!std::isfinite(hybrid.rb[i]) || !std::isfinite(naive.rb[i])) continue;
    const std::size_t g = cfg.group_of(i);
    out[g].rb += hybrid.rb[i];
    out[g].cv += hybrid.cv[i];
    out[g].rbn += naive.rb[i];
    out[g].cvn += naive.cv[i];
    ++count[g];
  }
  for (std::size_t g = 0; g < G; ++g) {
    out[g].n = cfg.n_groups[g];
    if (count[g] == 0) {
      out[g].rb = out[g].cv = out[g].rbn = out[g].cvn = kNaN;
      continue;
    }
    const double k = static_cast<double>(count[g]);
    out[g].rb /= k;
    out[g].cv /= k;
    out[g].rbn /= k;
    out[g].cvn /= k;
  }
  return out;
}

RbCvResult rb_cv_study(const RbCvConfig& cfg) {
  const ScenarioConfig& sc = cfg.scenario;
  sc.validate();
  if (sc.nonsampled != 0) throw InvalidInput("rb_cv_study: only sampled areas are supported");
  if (cfg.iterations < 1) throw InvalidInput("rb_cv_study: iterations must be >= 1");
  cfg.bootstrap.validate();

  RbCvResult out;
  const Estimator sv = sv_estimator(sc);
  const MseTable truth = simulate_mse(sc, std::span<const Estimator>(&sv, 1));
  out.true_mse = truth.mse.front();
  out.truth_replicates_used = truth.replicates_used;

  const std::size_t S = static_cast<std::size_t>(cfg.iterations);
  const Design design = replicate_design(sc, 0);
  struct Slot {
    bool ok = false;
    std::string failure;
    std::vector<double> hybrid;
    std::vector<double> naive;
  };
  std::vector<Slot> slots(S);
  parallel_for(S, sc.workers, [&](std::size_t s) {
    Slot& slot = slots[s];
    RandomStream rng(sc.seed, {kIterationStream, s});
    const SimDataset ds = gen_scenario(sc, design, rng);
    try {
      FitOptions o = sc.fit;
      o.workers = 1;
      const LocalFit global = fit_constant(sc.family, ds.records, o);
      double b = sc.fixed_bandwidth.value_or(0.0);
      if (sc.reselect_bandwidth) {
        const BandwidthSearch search = BandwidthSearch::defaults(ds.records, sc.cv_tol_fraction);
        b = select_bandwidth(sc.family, ds.records, search, global.params, o).bandwidth;
      }
      const SvFit fit = fit_all(sc.family, ds.records, KernelConfig{b}, global.params, o);
      BootstrapConfig bc = cfg.bootstrap;
      bc.seed = RandomStream(sc.seed, {kBootSeedStream, s}).next_u64();
      bc.workers = 1;
      bc.fit.workers = 1;
      const HybridMse h = hybrid_mse(sc.family, fit, ds.records, bc);
      slot.hybrid = h.value;
      slot.naive = h.naive;
      slot.ok = true;
    } catch (const NumericalFailure& ex) {
      slot.failure = ex.what();
    }
  });

  std::vector<std::vector<double>> hyb;
  std::vector<std::vector<double>> nai;
  std::string first_failure;
  for (Slot& slot : slots) {
    if (!slot.ok) {
      ++out.iterations_failed;
      if (first_failure.empty()) first_failure = slot.failure;
      continue;
    }
    hyb.push_back(std::move(slot.hybrid));
    nai.push_back(std::move(slot.naive));
  }
  out.iterations_used = hyb.size();
  if (hyb.empty() || out.iterations_failed > allowed_failures(S, sc.max_failure_fraction)) {
    throw NumericalFailure("rb_cv_study: " + std::to_string(out.iterations_failed) + " of " + std::to_string(S) +
                           " iterations failed; first: " + first_failure);
  }
  out.hybrid = rb_cv(out.true_mse, hyb);
  out.naive = rb_cv(out.true_mse, nai);
  out.groups = summarize_groups(sc, out.hybrid, out.naive);
  return out;
}

}  // namespace sveb::sim
