#pragma once

// Unchecked per-family kernels shared by the fitters. Arguments are assumed
// to be in-domain; z is the count n*y for the two count families.

namespace sveb::detail {

double logistic(double eta);

double kernel_gaussian(double y, double n, double nu, double m);
double kernel_poisson_gamma(double z, double n, double nu, double m);
// one_minus_m is passed separately so a saturated logistic keeps precision.
double kernel_binomial_beta(double z, double n, double nu, double m, double one_minus_m);

}  // namespace sveb::detail
