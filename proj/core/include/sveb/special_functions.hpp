#pragma once

// Log-gamma, digamma, trigamma and log-beta for positive real arguments.
//
// All routines shift small arguments upward with the standard recurrences
// and then evaluate the asymptotic (Stirling / Bernoulli) series, which is
// accurate to a few ulps once the argument exceeds 10.

namespace sveb::special {

/// log Gamma(x) for x > 0.
double log_gamma(double x);

/// log Gamma(a + d) - log Gamma(a) for a > 0, a + d > 0.
///
/// Evaluated without forming the two log-gamma values separately when both
/// arguments are large, so the result keeps full relative accuracy even for
/// a ~ 1e8 where the individual terms are ~ 1e9.
double log_gamma_diff(double a, double d);

/// digamma(x) = d/dx log Gamma(x), x > 0.
double digamma(double x);

/// trigamma(x) = d^2/dx^2 log Gamma(x), x > 0.
double trigamma(double x);

/// log B(a, b) for a, b > 0.
double log_beta(double a, double b);

/// log of the binomial coefficient C(n, k) for real 0 <= k <= n.
double log_choose(double n, double k);

}  // namespace sveb::special
