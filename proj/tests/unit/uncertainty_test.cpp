#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sveb/errors.hpp"
#include "sveb/parallel.hpp"
#include "sveb/uncertainty.hpp"

namespace {

using namespace sveb;

const FamilySpec GA = FamilySpec::make(FamilyId::gaussian);
const FamilySpec PG = FamilySpec::make(FamilyId::poisson_gamma);
const FamilySpec BB = FamilySpec::make(FamilyId::binomial_beta);

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

void expect_bitwise(const std::vector<double>& a, const std::vector<double>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isnan(a[i]) && std::isnan(b[i])) continue;
    EXPECT_TRUE(same_bits(a[i], b[i])) << "position " << i << ": " << a[i] << " vs " << b[i];
  }
}

SvFit manual_fit(const FamilySpec& spec, std::span<const AreaRecord> data, const HyperParams& phi) {
  SvFit fit;
  fit.spec = spec;
  fit.bandwidth = 1.0;
  fit.global = phi;
  fit.areas.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].sampled) fit.areas[i] = LocalFit{phi, {}};
  }
  return fit;
}

AreaRecord unsampled(const std::string& id, Coord u, std::vector<double> x) {
  AreaRecord r;
  r.id = id;
  r.u = u;
  r.x = std::move(x);
  r.y = std::numeric_limits<double>::quiet_NaN();
  r.n = 0.0;
  r.sampled = false;
  return r;
}

TEST(NaiveMse, GaussianIdentity) {
  std::vector<AreaRecord> data(3);
  const double D[] = {0.5, 1.0, 3.0};
  for (std::size_t i = 0; i < 3; ++i) {
    data[i].id = "g" + std::to_string(i);
    data[i].x = {1.0};
    data[i].y = 0.3 * static_cast<double>(i);
    data[i].n = 1.0 / D[i];
  }
  const double A = 0.8;
  const SvFit fit = manual_fit(GA, data, HyperParams{{0.2}, 1.0 / A});
  const auto naive = naive_mse(GA, fit, data);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(naive[i], A * D[i] / (A + D[i]), 1e-14);
}

TEST(NaiveMse, VanishesWithSampleSize) {
  std::vector<AreaRecord> data(1);
  data[0].id = "a";
  data[0].x = {1.0, 0.3};
  data[0].y = 2.0;
  const SvFit fit = manual_fit(PG, data, HyperParams{{0.1, 0.5}, 5.0});
  double prev = std::numeric_limits<double>::infinity();
  for (double n : {1.0, 1e2, 1e4, 1e8}) {
    data[0].n = n;
    const double v = naive_mse(PG, fit, data)[0];
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_LT(prev, 1e-7);
}

TEST(NaiveMse, MatchesDirectFormula) {
  RandomStream rng(4242, {1});
  for (int c = 0; c < 40; ++c) {
    const double nu = 0.5 + 30.0 * rng.uniform();
    const double n = 1.0 + std::floor(40.0 * rng.uniform());
    const double b0 = -1.0 + 2.0 * rng.uniform();
    const double x1 = -1.0 + 2.0 * rng.uniform();
    std::vector<AreaRecord> data(1);
    data[0].id = "r";
    data[0].x = {1.0, x1};
    data[0].n = n;
    data[0].y = 0.0;
    const HyperParams phi{{b0, 0.4}, nu};
    const double eta = b0 + 0.4 * x1;

    const double m_pg = std::exp(eta);
    EXPECT_NEAR(naive_mse(PG, manual_fit(PG, data, phi), data)[0], m_pg / (n + nu), 1e-13 * m_pg);

    const double m_bb = 1.0 / (1.0 + std::exp(-eta));
    const double want_bb = m_bb * (1.0 - m_bb) / (nu + 1.0) * nu / (n + nu);
    EXPECT_NEAR(naive_mse(BB, manual_fit(BB, data, phi), data)[0], want_bb, 1e-13);
  }
}

TEST(NaiveMse, NonsampledIsNaN) {
  auto data = oracle::synthetic(PG, 4, 3);
  data.push_back(unsampled("z", {0.5, 0.5}, {1.0, 0.0}));
  const auto naive = naive_mse(PG, manual_fit(PG, data, HyperParams{{0.0, 0.5}, 10.0}), data);
  EXPECT_TRUE(std::isnan(naive.back()));
  EXPECT_TRUE(std::isfinite(naive.front()));
}

struct PgFixture : ::testing::Test {
  static void SetUpTestSuite() {
    data = new std::vector<AreaRecord>(oracle::synthetic(PG, 30, 17));
    data->push_back(unsampled("ns", {0.45, 0.55}, {1.0, 0.2}));
    fit = new SvFit(fit_all(PG, *data, KernelConfig{0.8}));
  }
  static void TearDownTestSuite() {
    delete fit;
    delete data;
  }
  static std::vector<AreaRecord>* data;
  static SvFit* fit;
};
std::vector<AreaRecord>* PgFixture::data = nullptr;
SvFit* PgFixture::fit = nullptr;

TEST_F(PgFixture, BootstrapDatasetUsesPerAreaStreams) {
  const auto boot = bootstrap_dataset(PG, *fit, *data, 99, 5);
  ASSERT_EQ(boot.size(), data->size());
  for (std::size_t i = 0; i < boot.size(); ++i) {
    if (!(*data)[i].sampled) {
      EXPECT_TRUE(std::isnan(boot[i].y));
      continue;
    }
    RandomStream rng(99, {5, i});
    EXPECT_EQ(boot[i].y, sample_area(PG, fit->params(i), (*data)[i].x, (*data)[i].n, rng).y);
    EXPECT_EQ(boot[i].n, (*data)[i].n);
    EXPECT_EQ(boot[i].u.u1, (*data)[i].u.u1);
  }
}

TEST_F(PgFixture, HybridWithFrozenRefitEqualsNaive) {
  BootstrapConfig cfg;
  cfg.replicates = 12;
  cfg.seed = 5;
  const SvFit frozen = *fit;
  const auto h = hybrid_mse(PG, *fit, *data, cfg, [&](std::span<const AreaRecord>) { return frozen; });
  const auto naive = naive_mse(PG, *fit, *data);
  EXPECT_EQ(h.replicates_used, 12u);
  for (std::size_t i = 0; i < data->size(); ++i) {
    if (!(*data)[i].sampled) {
      EXPECT_TRUE(std::isnan(h.value[i]));
      continue;
    }
    EXPECT_EQ(h.value[i], naive[i]);
    EXPECT_EQ(h.raw[i], naive[i]);
    EXPECT_EQ(h.r2[i], 0.0);
    EXPECT_FALSE(h.truncated[i]);
  }
}

TEST_F(PgFixture, HybridDecompositionAndFloor) {
  BootstrapConfig cfg;
  cfg.replicates = 10;
  cfg.seed = 31;
  const auto run = run_bootstrap(PG, *fit, *data, cfg);
  const auto h = hybrid_mse(PG, *fit, *data, run);
  for (std::size_t i = 0; i < data->size(); ++i) {
    if (!(*data)[i].sampled) continue;
    double mean_r1 = 0.0;
    double r2 = 0.0;
    for (const auto& rep : run.replicates) {
      mean_r1 += rep.r1[i] / 10.0;
      r2 += (rep.mu_hat[i] - rep.mu_plugin[i]) * (rep.mu_hat[i] - rep.mu_plugin[i]) / 10.0;
    }
    EXPECT_NEAR(h.mean_r1_boot[i], mean_r1, 1e-14);
    EXPECT_NEAR(h.r2[i], r2, 1e-14);
    EXPECT_NEAR(h.raw[i], 2.0 * h.naive[i] - mean_r1 + r2, 1e-13);
    EXPECT_GE(h.value[i], 0.0);
    EXPECT_EQ(h.value[i], std::max(h.raw[i], h.r2[i]));
  }
}

TEST_F(PgFixture, HybridDeterministicAcrossWorkers) {
  BootstrapConfig cfg;
  cfg.replicates = 6;
  cfg.seed = 77;
  cfg.workers = 1;
  const auto a = hybrid_mse(PG, *fit, *data, cfg);
  cfg.workers = 3;
  const auto b = hybrid_mse(PG, *fit, *data, cfg);
  const auto c = hybrid_mse(PG, *fit, *data, cfg);
  expect_bitwise(a.value, b.value);
  expect_bitwise(a.raw, b.raw);
  expect_bitwise(a.r2, b.r2);
  expect_bitwise(b.value, c.value);
}

TEST_F(PgFixture, ReplicateFailuresDroppedOrFatal) {
  BootstrapConfig cfg;
  cfg.replicates = 10;
  cfg.workers = 1;
  const SvFit frozen = *fit;
  auto failing_first = [&](int k) {
    auto calls = std::make_shared<std::atomic<int>>(0);
    return Refitter([calls, k, &frozen](std::span<const AreaRecord>) {
      if (calls->fetch_add(1) < k) throw NumericalFailure("stub failure");
      return frozen;
    });
  };
  const auto run = run_bootstrap(PG, *fit, *data, cfg, failing_first(1));
  EXPECT_EQ(run.used(), 9u);
  EXPECT_EQ(run.failed(), 1u);
  EXPECT_EQ(hybrid_mse(PG, *fit, *data, run).replicates_used, 9u);
  EXPECT_THROW(run_bootstrap(PG, *fit, *data, cfg, failing_first(2)), NumericalFailure);
}

TEST(BootstrapConfig, Validation) {
  BootstrapConfig cfg;
  cfg.replicates = 1;
  EXPECT_THROW(cfg.validate(), InvalidInput);
  cfg.replicates = 2;
  EXPECT_NO_THROW(cfg.validate());
  cfg.max_failure_fraction = 1.0;
  EXPECT_THROW(cfg.validate(), InvalidInput);
}

TEST(Benchmark, HandExample) {
  const std::vector<double> mu{1.0, 1.0}, y{2.0, 4.0}, c{0.5, 0.5};
  const auto out = benchmark_estimates(mu, y, c);
  EXPECT_DOUBLE_EQ(out[0], 3.0);
  EXPECT_DOUBLE_EQ(out[1], 3.0);
  EXPECT_DOUBLE_EQ(0.5 * out[0] + 0.5 * out[1], 3.0);
}

TEST(Benchmark, AlreadyConstrainedUnchanged) {
  const std::vector<double> mu{1.0, 3.0, 2.0}, y{2.0, 2.0, 2.0}, c{0.25, 0.25, 0.5};
  const auto out = benchmark_estimates(mu, y, c);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out[i], mu[i]);
}

TEST(Benchmark, ConstraintExactOnRandomInstances) {
  RandomStream rng(8080, {0});
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 2 + static_cast<std::size_t>(60 * rng.uniform());
    std::vector<AreaRecord> data(m);
    std::vector<double> mu(m), y(m);
    for (std::size_t i = 0; i < m; ++i) {
      data[i].id = std::to_string(i);
      data[i].n = 1.0 + std::floor(50 * rng.uniform());
      data[i].sampled = rng.uniform() > 0.1 || i == 0;
      y[i] = data[i].sampled ? 100.0 * rng.uniform() : std::numeric_limits<double>::quiet_NaN();
      mu[i] = 100.0 * rng.uniform();
    }
    const auto c = default_benchmark_weights(data);
    const auto out = benchmark_estimates(mu, y, c);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (c[i] == 0.0) {
        EXPECT_EQ(out[i], mu[i]);
        continue;
      }
      lhs += c[i] * out[i];
      rhs += c[i] * y[i];
    }
    EXPECT_NEAR(lhs, rhs, 1e-10) << "instance " << t;
  }
}

TEST(Benchmark, DefaultWeights) {
  std::vector<AreaRecord> data(3);
  data[0].n = 10;
  data[1].n = 30;
  data[2].sampled = false;
  const auto c = default_benchmark_weights(data);
  EXPECT_DOUBLE_EQ(c[0], 0.25);
  EXPECT_DOUBLE_EQ(c[1], 0.75);
  EXPECT_EQ(c[2], 0.0);
}

TEST(Benchmark, WeightValidation) {
  const std::vector<double> mu{1.0, 1.0}, y{1.0, 1.0};
  EXPECT_THROW(benchmark_estimates(mu, y, std::vector<double>{0.5, 0.6}), InvalidInput);
  EXPECT_THROW(benchmark_estimates(mu, y, std::vector<double>{1.5, -0.5}), InvalidInput);
  EXPECT_THROW(benchmark_estimates(mu, y, std::vector<double>{1.0}), InvalidInput);
  EXPECT_NO_THROW(validate_benchmark_weights(std::vector<double>{0.3, 0.7 + 1e-12}));
}

// Adjustments shrink as the number of areas grows (fresh areas from the same
// model). Shrinkage uses the true hyperparameters: at the constant-model MLE
// the intercept score makes the n-weighted gap vanish identically.
TEST(Benchmark, AdjustmentShrinksWithAreaCount) {
  std::vector<double> avg;
  for (std::size_t m : {10u, 40u, 160u}) {
    double total = 0.0;
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
      const auto data = oracle::synthetic(PG, m, 500 + seed, 20.0, false);
      const HyperParams phi{{0.1, 0.7}, 50.0};
      std::vector<double> mu(m), y(m);
      for (std::size_t i = 0; i < m; ++i) {
        mu[i] = bayes_estimate(PG, data[i].y, data[i].n, phi, data[i].x);
        y[i] = data[i].y;
      }
      const auto out = benchmark_estimates(mu, y, default_benchmark_weights(data));
      double worst = 0.0;
      for (std::size_t i = 0; i < m; ++i) worst = std::max(worst, std::fabs(out[i] - mu[i]));
      total += worst / 8.0;
    }
    avg.push_back(total);
  }
  EXPECT_GT(avg[0], avg[1]);
  EXPECT_GT(avg[1], avg[2]);
}

BootstrapRun synthetic_run(std::size_t N, std::size_t B, std::uint64_t seed) {
  RandomStream rng(seed, {0});
  BootstrapRun run;
  run.replicates.resize(B);
  for (auto& rep : run.replicates) {
    rep.ok = true;
    for (std::size_t i = 0; i < N; ++i) {
      rep.y.push_back(5.0 * rng.uniform());
      rep.mu_hat.push_back(5.0 * rng.uniform());
      rep.mu_plugin.push_back(rep.mu_hat.back() + 0.1 * (rng.uniform() - 0.5));
      rep.r1.push_back(rng.uniform());
    }
  }
  return run;
}

TEST(ExcessMse, SingleAreaWeights) {
  const std::size_t N = 5;
  std::vector<AreaRecord> data(N);
  for (auto& r : data) r.n = 10;
  const SvFit fit = manual_fit(PG, data, HyperParams{{0.0}, 1.0});
  const auto run = synthetic_run(N, 7, 3);
  std::vector<double> c(N, 0.0);
  c[2] = 1.0;
  const auto e = excess_mse(fit, data, c, run);
  double want = 0.0;
  for (const auto& rep : run.replicates) {
    const double d = rep.y[2] - rep.mu_hat[2];
    want += (d * d + 2.0 * d * (rep.mu_hat[2] - rep.mu_plugin[2])) / 7.0;
  }
  for (std::size_t i = 0; i < N; ++i) {
    if (i == 2) {
      EXPECT_NEAR(e.value[i], want, 1e-12);
    } else {
      EXPECT_EQ(e.value[i], 0.0);
      EXPECT_FALSE(e.negative[i]);
    }
  }
}

TEST(ExcessMse, ZeroWhenConstraintAlreadyHolds) {
  const std::size_t N = 4;
  std::vector<AreaRecord> data(N);
  for (auto& r : data) r.n = 10;
  const SvFit fit = manual_fit(PG, data, HyperParams{{0.0}, 1.0});
  auto run = synthetic_run(N, 5, 9);
  for (auto& rep : run.replicates) rep.y = rep.mu_hat;
  const auto e = excess_mse(fit, data, default_benchmark_weights(data), run);
  for (double v : e.value) EXPECT_EQ(v, 0.0);
}

TEST(ExcessMse, RejectsWeightOnNonsampledArea) {
  std::vector<AreaRecord> data(2);
  data[0].n = 10;
  data[1] = unsampled("z", {}, {1.0});
  const SvFit fit = manual_fit(PG, data, HyperParams{{0.0}, 1.0});
  EXPECT_THROW(excess_mse(fit, data, std::vector<double>{0.5, 0.5}, synthetic_run(2, 3, 1)), InvalidInput);
}

TEST_F(PgFixture, ExcessMseSmallRelativeToMse) {
  BootstrapConfig cfg;
  cfg.replicates = 20;
  cfg.seed = 12;
  const auto run = run_bootstrap(PG, *fit, *data, cfg);
  const auto h = hybrid_mse(PG, *fit, *data, run);
  const auto e = excess_mse(*fit, *data, default_benchmark_weights(*data), run);
  std::size_t small = 0, sampled = 0;
  for (std::size_t i = 0; i < data->size(); ++i) {
    if (!(*data)[i].sampled) continue;
    ++sampled;
    if (std::fabs(e.value[i]) < 0.05 * h.value[i]) ++small;
  }
  EXPECT_GE(small, sampled * 9 / 10);
}

TEST(PredictNonsampled, HugeBandwidthMatchesConstantFit) {
  for (const FamilySpec& spec : {PG, BB}) {
    auto data = oracle::synthetic(spec, 30, 23, 20.0, false);
    const auto global = fit_constant(spec, data).params;
    data.push_back(unsampled("ns", {0.3, 0.9}, {1.0, -0.4}));
    const auto p = predict_nonsampled(spec, data.size() - 1, data, KernelConfig{1e6});
    const double want = mean_link(spec, linear_predictor(global.beta, data.back().x));
    EXPECT_NEAR(p.mean, want, 1e-5 * want);
  }
}

TEST_F(PgFixture, TwinOfSampledArea) {
  const std::size_t k = 4;
  auto twin_data = *data;
  twin_data.push_back(unsampled("twin", (*data)[k].u, (*data)[k].x));
  const auto p = predict_nonsampled(PG, twin_data.size() - 1, twin_data, KernelConfig{0.8});
  const double want = prior_mean(PG, fit->params(k), (*data)[k].x);
  EXPECT_NEAR(p.mean, want, 1e-5 * want);
}

TEST(PredictNonsampled, InfeasibleNamesArea) {
  auto data = oracle::synthetic(PG, 10, 5);
  data.push_back(unsampled("far-away", {50.0, 50.0}, {1.0, 0.0}));
  try {
    predict_nonsampled(PG, data.size() - 1, data, KernelConfig{0.2});
    FAIL() << "expected NumericalFailure";
  } catch (const NumericalFailure& e) {
    EXPECT_NE(std::string(e.what()).find("far-away"), std::string::npos);
  }
}

TEST_F(PgFixture, NonsampledFrozenRepredictionIsPriorVariance) {
  const std::size_t j = data->size() - 1;
  const KernelConfig kernel{0.8};
  const auto pred = predict_nonsampled(PG, j, *data, kernel);
  BootstrapConfig cfg;
  cfg.replicates = 15;
  const auto out = nonsampled_mse(PG, j, *data, *fit, kernel, cfg,
                                  [&](std::span<const AreaRecord>) { return pred.mean; });
  EXPECT_EQ(out.variability, 0.0);
  EXPECT_EQ(out.cross, 0.0);
  EXPECT_EQ(out.value, prior_variance(PG, pred.fit.params.nu, pred.mean));
  EXPECT_FALSE(out.truncated);
}

TEST_F(PgFixture, NonsampledDeterministic) {
  const std::size_t j = data->size() - 1;
  BootstrapConfig cfg;
  cfg.replicates = 8;
  cfg.seed = 404;
  cfg.workers = 1;
  const auto a = nonsampled_mse(PG, j, *data, *fit, KernelConfig{0.8}, cfg);
  cfg.workers = 4;
  const auto b = nonsampled_mse(PG, j, *data, *fit, KernelConfig{0.8}, cfg);
  EXPECT_TRUE(same_bits(a.value, b.value));
  EXPECT_TRUE(same_bits(a.raw, b.raw));
  EXPECT_TRUE(same_bits(a.cross, b.cross));
  EXPECT_GE(a.value, 0.0);
}

// Average of the bootstrap estimator over independent data sets against a
// direct simulation of E(m_hat - mu)^2 under a known constant model.
TEST(NonsampledMse, AgreesWithSimulatedTruth) {
  const HyperParams truth{{0.1, 0.7}, 50.0};
  const std::size_t m = 40;
  const KernelConfig kernel{2.0};
  RandomStream design_rng(606, {0});
  std::vector<AreaRecord> design(m + 1);
  for (std::size_t i = 0; i <= m; ++i) {
    design[i].id = "d" + std::to_string(i);
    design[i].u = {design_rng.uniform(), design_rng.uniform()};
    design[i].x = {1.0, 2.0 * design_rng.uniform() - 1.0};
    design[i].n = 20.0;
  }
  design[m].sampled = false;
  design[m].n = 0.0;
  design[m].y = std::numeric_limits<double>::quiet_NaN();

  auto draw = [&](std::uint64_t r, double& mu_j) {
    auto d = design;
    for (std::size_t i = 0; i < m; ++i) {
      RandomStream rng(9001, {r, i});
      d[i].y = sample_area(PG, truth, d[i].x, d[i].n, rng).y;
    }
    RandomStream rng(9001, {r, m});
    mu_j = sample_prior_mean(PG, truth.nu, prior_mean(PG, truth, d[m].x), rng);
    return d;
  };

  const int R = 500;
  std::vector<double> sq(R);
  parallel_for(R, 0, [&](std::size_t r) {
    double mu_j = 0.0;
    const auto d = draw(r, mu_j);
    const double e = predict_nonsampled(PG, m, d, kernel).mean - mu_j;
    sq[r] = e * e;
  });
  double mean = 0.0, var = 0.0;
  for (double v : sq) mean += v / R;
  for (double v : sq) var += (v - mean) * (v - mean) / (R - 1);
  const double se_truth = std::sqrt(var / R);

  const int D = 20;
  std::vector<double> est(D);
  for (int s = 0; s < D; ++s) {
    double unused = 0.0;
    const auto d = draw(100000 + s, unused);
    const SvFit fit = fit_all(PG, d, kernel);
    BootstrapConfig cfg;
    cfg.replicates = 100;
    cfg.seed = 77 + s;
    est[s] = nonsampled_mse(PG, m, d, fit, kernel, cfg).value;
  }
  double est_mean = 0.0, est_var = 0.0;
  for (double v : est) est_mean += v / D;
  for (double v : est) est_var += (v - est_mean) * (v - est_mean) / (D - 1);
  const double se = std::sqrt(se_truth * se_truth + est_var / D);
  EXPECT_NEAR(est_mean, mean, 3.0 * se) << "truth " << mean << " +- " << se_truth;
}

}  // namespace
