#include "sveb/family.hpp"

#include <cmath>
#include <numbers>

#include "family_detail.hpp"
#include "sveb/errors.hpp"
#include "sveb/special_functions.hpp"

namespace sveb {

using special::log_gamma;
using special::log_gamma_diff;

FamilySpec FamilySpec::make(FamilyId id) {
  switch (id) {
    case FamilyId::gaussian:
      return {id, 1.0, 0.0, 0.0};
    case FamilyId::poisson_gamma:
      return {id, 0.0, 1.0, 0.0};
    case FamilyId::binomial_beta:
      return {id, 0.0, 1.0, -1.0};
  }
  throw InvalidInput("unknown family");
}

FamilySpec FamilySpec::parse(std::string_view name) {
  if (name == "gaussian" || name == "fay_herriot") return make(FamilyId::gaussian);
  if (name == "poisson_gamma") return make(FamilyId::poisson_gamma);
  if (name == "binomial_beta") return make(FamilyId::binomial_beta);
  throw InvalidInput("unknown family '" + std::string(name) +
                     "' (expected gaussian, poisson_gamma or binomial_beta)");
}

std::string_view FamilySpec::name() const {
  switch (id) {
    case FamilyId::gaussian:
      return "gaussian";
    case FamilyId::poisson_gamma:
      return "poisson_gamma";
    case FamilyId::binomial_beta:
      return "binomial_beta";
  }
  return "unknown";
}

double distance(const Coord& a, const Coord& b) { return std::hypot(a.u1 - b.u1, a.u2 - b.u2); }

double linear_predictor(std::span<const double> beta, std::span<const double> x) {
  if (beta.size() != x.size()) throw InvalidInput("coefficient / covariate length mismatch");
  double eta = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) eta += beta[j] * x[j];
  return eta;
}

double mean_link(const FamilySpec& spec, double eta) {
  switch (spec.id) {
    case FamilyId::gaussian:
      return eta;
    case FamilyId::poisson_gamma:
      return std::exp(eta);
    case FamilyId::binomial_beta:
      return detail::logistic(eta);
  }
  return eta;
}

double inverse_link(const FamilySpec& spec, double mu) {
  if (!in_mean_domain(spec, mu)) throw InvalidInput("inverse_link: mean outside family domain");
  switch (spec.id) {
    case FamilyId::gaussian:
      return mu;
    case FamilyId::poisson_gamma:
      return std::log(mu);
    case FamilyId::binomial_beta:
      return std::log(mu) - std::log1p(-mu);
  }
  return mu;
}

bool in_mean_domain(const FamilySpec& spec, double mu) {
  switch (spec.id) {
    case FamilyId::gaussian:
      return std::isfinite(mu);
    case FamilyId::poisson_gamma:
      return mu >= 0.0 && std::isfinite(mu);
    case FamilyId::binomial_beta:
      return mu >= 0.0 && mu <= 1.0;
  }
  return false;
}

double variance_fn(const FamilySpec& spec, double mu) {
  if (!in_mean_domain(spec, mu)) throw InvalidInput("variance_fn: mean outside family domain");
  return spec.v0 + mu * (spec.v1 + spec.v2 * mu);
}

double prior_mean(const FamilySpec& spec, const HyperParams& phi, std::span<const double> x) {
  return mean_link(spec, linear_predictor(phi.beta, x));
}

double bayes_estimate(double y, double n, double nu, double m) {
  if (!(n + nu > 0.0)) throw InvalidInput("bayes_estimate: n + nu must be positive");
  if (n == 0.0) return m;
  return (n * y + nu * m) / (n + nu);
}

double bayes_estimate(const FamilySpec& spec, double y, double n, const HyperParams& phi,
                      std::span<const double> x) {
  return bayes_estimate(y, n, phi.nu, prior_mean(spec, phi, x));
}

namespace {

void require_nu(const FamilySpec& spec, double nu) {
  if (!(nu > spec.v2) || !(nu > 0.0) || !std::isfinite(nu)) {
    throw InvalidInput("prior precision nu must be finite and exceed max(0, v2)");
  }
}

}  // namespace

double prior_variance(const FamilySpec& spec, double nu, double m) {
  require_nu(spec, nu);
  return variance_fn(spec, m) / (nu - spec.v2);
}

double prior_variance(const FamilySpec& spec, const HyperParams& phi, std::span<const double> x) {
  return prior_variance(spec, phi.nu, prior_mean(spec, phi, x));
}

double log_norm_const(const FamilySpec& spec, double nu, double m) {
  require_nu(spec, nu);
  if (!in_mean_domain(spec, m)) throw InvalidInput("log_norm_const: mean outside family domain");
  switch (spec.id) {
    case FamilyId::gaussian:
      return 0.5 * std::log(nu / (2.0 * std::numbers::pi)) - 0.5 * nu * m * m;
    case FamilyId::poisson_gamma:
      return nu * m * std::log(nu) - log_gamma(nu * m);
    case FamilyId::binomial_beta:
      return -special::log_beta(nu * m, nu * (1.0 - m));
  }
  return 0.0;
}

double log_base_measure(const FamilySpec& spec, double y, double n) {
  if (!(n > 0.0)) throw InvalidInput("log_base_measure: n must be positive");
  switch (spec.id) {
    case FamilyId::gaussian:
      return 0.5 * std::log(n / (2.0 * std::numbers::pi)) - 0.5 * n * y * y;
    case FamilyId::poisson_gamma: {
      const double z = n * y;
      return z * std::log(n) - log_gamma(z + 1.0);
    }
    case FamilyId::binomial_beta:
      return special::log_choose(n, n * y);
  }
  return 0.0;
}

namespace detail {

double logistic(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double kernel_gaussian(double y, double n, double nu, double m) {
  if (n == 0.0) return 0.0;
  const double r = y - m;
  return -0.5 * std::log1p(n / nu) - 0.5 * n * nu / (n + nu) * r * r + 0.5 * n * y * y;
}

double kernel_poisson_gamma(double z, double n, double nu, double m) {
  if (n == 0.0) return 0.0;
  const double a = nu * m;
  return log_gamma_diff(a, z) - a * std::log1p(n / nu) - z * std::log(n + nu);
}

double kernel_binomial_beta(double z, double n, double nu, double m, double one_minus_m) {
  if (n == 0.0) return 0.0;
  const double a = nu * m;
  const double b = nu * one_minus_m;
  return log_gamma_diff(a, z) + log_gamma_diff(b, n - z) - log_gamma_diff(nu, n);
}

}  // namespace detail

double marginal_kernel(const FamilySpec& spec, double y, double n, double nu, double m) {
  require_nu(spec, nu);
  if (!in_mean_domain(spec, m)) throw InvalidInput("marginal_kernel: mean outside family domain");
  if (n < 0.0) throw InvalidInput("marginal_kernel: n must be >= 0");
  switch (spec.id) {
    case FamilyId::gaussian:
      return detail::kernel_gaussian(y, n, nu, m);
    case FamilyId::poisson_gamma:
      return detail::kernel_poisson_gamma(n * y, n, nu, m);
    case FamilyId::binomial_beta:
      return detail::kernel_binomial_beta(n * y, n, nu, m, 1.0 - m);
  }
  return 0.0;
}

double marginal_loglik(const FamilySpec& spec, double y, double n, double nu, double m) {
  return log_base_measure(spec, y, n) + marginal_kernel(spec, y, n, nu, m);
}

double marginal_loglik(const FamilySpec& spec, double y, double n, const HyperParams& phi,
                       std::span<const double> x) {
  return marginal_loglik(spec, y, n, phi.nu, prior_mean(spec, phi, x));
}

double r1(const FamilySpec& spec, double n, double nu, double m) {
  require_nu(spec, nu);
  if (n < 0.0) throw InvalidInput("r1: n must be >= 0");
  return nu * variance_fn(spec, m) / ((n + nu) * (nu - spec.v2));
}

double r1(const FamilySpec& spec, double n, const HyperParams& phi, std::span<const double> x) {
  return r1(spec, n, phi.nu, prior_mean(spec, phi, x));
}

double sample_prior_mean(const FamilySpec& spec, double nu, double m, RandomStream& rng) {
  require_nu(spec, nu);
  switch (spec.id) {
    case FamilyId::gaussian:
      return m + rng.normal() / std::sqrt(nu);
    case FamilyId::poisson_gamma:
      return rng.gamma(nu * m) / nu;
    case FamilyId::binomial_beta:
      return rng.beta(nu * m, nu * (1.0 - m));
  }
  return m;
}

double sample_observation(const FamilySpec& spec, double mu, double n, RandomStream& rng) {
  if (!(n > 0.0)) throw InvalidInput("sample_observation: n must be positive");
  switch (spec.id) {
    case FamilyId::gaussian:
      return mu + rng.normal() / std::sqrt(n);
    case FamilyId::poisson_gamma:
      return static_cast<double>(rng.poisson(n * mu)) / n;
    case FamilyId::binomial_beta: {
      const double trials = std::round(n);
      return static_cast<double>(rng.binomial(static_cast<std::int64_t>(trials), mu)) / trials;
    }
  }
  return mu;
}

AreaDraw sample_area(const FamilySpec& spec, const HyperParams& phi, std::span<const double> x, double n,
                     RandomStream& rng) {
  const double mu = sample_prior_mean(spec, phi.nu, prior_mean(spec, phi, x), rng);
  return {mu, sample_observation(spec, mu, n, rng)};
}

namespace {

bool near_integer(double v) { return std::fabs(v - std::round(v)) <= 1e-8 * std::max(1.0, std::fabs(v)); }

}  // namespace

void validate_record(const FamilySpec& spec, const AreaRecord& rec) {
  for (double xv : rec.x) {
    if (!std::isfinite(xv)) throw InvalidInput("area '" + rec.id + "': non-finite covariate");
  }
  if (!std::isfinite(rec.u.u1) || !std::isfinite(rec.u.u2)) {
    throw InvalidInput("area '" + rec.id + "': non-finite coordinate");
  }
  if (!rec.sampled) return;
  if (!(rec.n > 0.0) || !std::isfinite(rec.n)) throw InvalidInput("area '" + rec.id + "': n must be positive");
  if (!std::isfinite(rec.y)) throw InvalidInput("area '" + rec.id + "': y must be finite");
  const double z = rec.n * rec.y;
  switch (spec.id) {
    case FamilyId::gaussian:
      break;
    case FamilyId::poisson_gamma:
      if (z < 0.0 || !near_integer(z)) {
        throw InvalidInput("area '" + rec.id + "': n*y must be a nonnegative integer for poisson_gamma");
      }
      break;
    case FamilyId::binomial_beta:
      if (!near_integer(rec.n)) throw InvalidInput("area '" + rec.id + "': n must be an integer for binomial_beta");
      if (z < 0.0 || z > rec.n + 1e-8 || !near_integer(z)) {
        throw InvalidInput("area '" + rec.id + "': n*y must be an integer in [0, n] for binomial_beta");
      }
      break;
  }
}

}  // namespace sveb
