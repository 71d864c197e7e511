#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sveb/random.hpp"

namespace sveb {

enum class FamilyId { gaussian, poisson_gamma, binomial_beta };

/// One of the three conjugate NEF-QVF families. The quadratic variance
/// function is Q(mu) = v0 + v1 mu + v2 mu^2.
struct FamilySpec {
  FamilyId id = FamilyId::gaussian;
  double v0 = 1.0;
  double v1 = 0.0;
  double v2 = 0.0;

  static FamilySpec make(FamilyId id);
  static FamilySpec parse(std::string_view name);
  [[nodiscard]] std::string_view name() const;
};

struct Coord {
  double u1 = 0.0;
  double u2 = 0.0;
};

double distance(const Coord& a, const Coord& b);

/// One small area. For the count families y = z / n with integer count z;
/// for the gaussian family n = 1 / D with D the sampling variance.
/// x carries the full design row, intercept included.
struct AreaRecord {
  std::string id;
  double y = 0.0;
  double n = 0.0;
  std::vector<double> x;
  Coord u;
  bool sampled = true;
};

/// Spatially local hyperparameters: regression coefficients and prior
/// precision nu. For the gaussian family nu = 1 / A.
struct HyperParams {
  std::vector<double> beta;
  double nu = 1.0;
};

double linear_predictor(std::span<const double> beta, std::span<const double> x);

/// psi'(eta): identity, exp, or logistic.
double mean_link(const FamilySpec& spec, double eta);
/// Inverse of mean_link on the open mean domain.
double inverse_link(const FamilySpec& spec, double mu);
/// Q(mu) = v0 + v1 mu + v2 mu^2. Throws InvalidInput outside the mean domain.
double variance_fn(const FamilySpec& spec, double mu);
bool in_mean_domain(const FamilySpec& spec, double mu);

/// Prior mean m = psi'(x' beta).
double prior_mean(const FamilySpec& spec, const HyperParams& phi, std::span<const double> x);

/// (n y + nu m) / (n + nu).
double bayes_estimate(double y, double n, double nu, double m);
double bayes_estimate(const FamilySpec& spec, double y, double n, const HyperParams& phi,
                      std::span<const double> x);

/// Var(mu) = Q(m) / (nu - v2).
double prior_variance(const FamilySpec& spec, double nu, double m);
double prior_variance(const FamilySpec& spec, const HyperParams& phi, std::span<const double> x);

/// log-normaliser C(nu, m) of the conjugate prior on the natural parameter.
double log_norm_const(const FamilySpec& spec, double nu, double m);

/// c(y, n), the base measure of the first stage.
double log_base_measure(const FamilySpec& spec, double y, double n);

/// C(nu, m) - C(n + nu, mu_tilde): the phi-dependent part of the marginal
/// log-likelihood of one area, evaluated in a cancellation-free form.
double marginal_kernel(const FamilySpec& spec, double y, double n, double nu, double m);

/// log f(y; phi) = c(y, n) + C(nu, m) - C(n + nu, mu_tilde).
double marginal_loglik(const FamilySpec& spec, double y, double n, double nu, double m);
double marginal_loglik(const FamilySpec& spec, double y, double n, const HyperParams& phi,
                       std::span<const double> x);

/// Leading MSE term R1 = nu Q(m) / ((n + nu)(nu - v2)).
double r1(const FamilySpec& spec, double n, double nu, double m);
double r1(const FamilySpec& spec, double n, const HyperParams& phi, std::span<const double> x);

/// Draw mu from the conjugate prior with parameters (nu, m).
double sample_prior_mean(const FamilySpec& spec, double nu, double m, RandomStream& rng);
/// Draw y | mu from the first stage.
double sample_observation(const FamilySpec& spec, double mu, double n, RandomStream& rng);

struct AreaDraw {
  double mu;
  double y;
};

/// Two-stage draw (mu, y) for one area.
AreaDraw sample_area(const FamilySpec& spec, const HyperParams& phi, std::span<const double> x, double n,
                     RandomStream& rng);

/// Check family-specific constraints on a sampled record (positive n,
/// integral counts). Throws InvalidInput with a descriptive message.
void validate_record(const FamilySpec& spec, const AreaRecord& rec);

}  // namespace sveb
