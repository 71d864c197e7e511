#pragma once

// Independent reference computations for the tests. Nothing here calls the
// library's closed forms: densities come from Boost.Math and integrals from
// Boost quadrature.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/sinh_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "sveb/family.hpp"
#include "sveb/random.hpp"

namespace oracle {

using sveb::AreaRecord;
using sveb::FamilyId;
using sveb::FamilySpec;

inline double lgam(double x) { return boost::math::lgamma(x); }

// log p(y | mu) on the scale of y's reference measure (counts for the
// discrete families, Lebesgue for gaussian).
inline double log_first_stage(FamilyId id, double y, double n, double mu) {
  switch (id) {
    case FamilyId::gaussian:
      return 0.5 * std::log(n / (2.0 * std::numbers::pi)) - 0.5 * n * (y - mu) * (y - mu);
    case FamilyId::poisson_gamma: {
      const double z = n * y;
      const double lam = n * mu;
      return (z > 0 ? z * std::log(lam) : 0.0) - lam - lgam(z + 1.0);
    }
    case FamilyId::binomial_beta: {
      const double z = n * y;
      double v = lgam(n + 1.0) - lgam(z + 1.0) - lgam(n - z + 1.0);
      if (z > 0) v += z * std::log(mu);
      if (n - z > 0) v += (n - z) * std::log1p(-mu);
      return v;
    }
  }
  return 0.0;
}

inline double log_prior(FamilyId id, double nu, double m, double mu) {
  switch (id) {
    case FamilyId::gaussian:
      return 0.5 * std::log(nu / (2.0 * std::numbers::pi)) - 0.5 * nu * (mu - m) * (mu - m);
    case FamilyId::poisson_gamma: {
      const double a = nu * m;
      return a * std::log(nu) - lgam(a) + (a - 1.0) * std::log(mu) - nu * mu;
    }
    case FamilyId::binomial_beta: {
      const double a = nu * m;
      const double b = nu * (1.0 - m);
      return lgam(a + b) - lgam(a) - lgam(b) + (a - 1.0) * std::log(mu) + (b - 1.0) * std::log1p(-mu);
    }
  }
  return 0.0;
}

struct Moments {
  double log_mass;  // log of the marginal density of y
  double mean;      // posterior mean of mu
};

// Integrates p(y | mu) pi(mu) over mu. The integrand is rescaled by its value
// at a crude mode found by a log-spaced scan so the quadrature never sees
// underflow.
inline Moments integrate(FamilyId id, double y, double n, double nu, double m) {
  auto logf = [&](double mu) { return log_first_stage(id, y, n, mu) + log_prior(id, nu, m, mu); };
  double lo = 0.0;
  double hi = 0.0;
  double best = -std::numeric_limits<double>::infinity();
  double arg = 0.0;
  if (id == FamilyId::gaussian) {
    const double c = (n * y + nu * m) / (n + nu);
    arg = c;
    best = logf(c);
  } else {
    lo = 1e-12;
    hi = id == FamilyId::binomial_beta ? 1.0 - 1e-12 : 1e4;
    for (int k = 0; k <= 4000; ++k) {
      const double t = std::log(lo) + (std::log(hi) - std::log(lo)) * k / 4000.0;
      double mu = std::exp(t);
      if (id == FamilyId::binomial_beta) mu = 1.0 / (1.0 + std::exp(-(-27.0 + 54.0 * k / 4000.0)));
      const double v = logf(mu);
      if (v > best) {
        best = v;
        arg = mu;
      }
    }
  }
  auto f0 = [&](double mu) {
    const double v = logf(mu) - best;
    return v < -745.0 ? 0.0 : std::exp(v);
  };
  auto f1 = [&](double mu) { return mu * f0(mu); };
  double i0 = 0.0;
  double i1 = 0.0;
  if (id == FamilyId::gaussian) {
    // shift so the peak sits at the origin of the doubly infinite map
    boost::math::quadrature::sinh_sinh<double> q;
    i0 = q.integrate([&](double t) { return f0(arg + t); });
    i1 = q.integrate([&](double t) { return f1(arg + t); });
  } else if (id == FamilyId::poisson_gamma) {
    boost::math::quadrature::tanh_sinh<double> ts;
    boost::math::quadrature::exp_sinh<double> es;
    // split at the mode: finite part near zero, infinite tail beyond
    i0 = ts.integrate(f0, 0.0, arg) + es.integrate(f0, arg, std::numeric_limits<double>::infinity());
    i1 = ts.integrate(f1, 0.0, arg) + es.integrate(f1, arg, std::numeric_limits<double>::infinity());
  } else {
    // Two halves, the upper one in t = 1 - mu so that mu near 1 keeps its
    // distance to the endpoint in full precision.
    const double a = nu * m;
    const double b = nu * (1.0 - m);
    const double z = n * y;
    auto logj = [&](double mu, double omu) {
      return lgam(n + 1.0) - lgam(z + 1.0) - lgam(n - z + 1.0) + lgam(a + b) - lgam(a) - lgam(b) +
             (z + a - 1.0) * std::log(mu) + (n - z + b - 1.0) * std::log(omu);
    };
    best = std::max(logj(0.5, 0.5), best);
    // Each half behaves like t^(k-1) at its endpoint; with t = s^(1/k) the
    // power is absorbed by the Jacobian, so small shapes (k near 0) leave a
    // smooth integrand instead of a near non-integrable spike.
    const double ka = z + a;
    const double kb = n - z + b;
    const double logc = lgam(n + 1.0) - lgam(z + 1.0) - lgam(n - z + 1.0) + lgam(a + b) - lgam(a) - lgam(b) - best;
    auto g0 = [&](double s) { return std::exp(logc + (kb - 1.0) * std::log1p(-std::pow(s, 1.0 / ka))) / ka; };
    auto h0 = [&](double s) { return std::exp(logc + (ka - 1.0) * std::log1p(-std::pow(s, 1.0 / kb))) / kb; };
    boost::math::quadrature::tanh_sinh<double> ts;
    const double sa = std::pow(0.5, ka);
    const double sb = std::pow(0.5, kb);
    const double lower0 = ts.integrate(g0, 0.0, sa, 1e-15);
    const double upper0 = ts.integrate(h0, 0.0, sb, 1e-15);
    const double lower1 = ts.integrate([&](double s) { return std::pow(s, 1.0 / ka) * g0(s); }, 0.0, sa, 1e-15);
    const double upper1 =
        ts.integrate([&](double s) { return (1.0 - std::pow(s, 1.0 / kb)) * h0(s); }, 0.0, sb, 1e-15);
    i0 = lower0 + upper0;
    i1 = lower1 + upper1;
  }
  return {best + std::log(i0), i1 / i0};
}

// Closed-form marginal pmf/density written from textbook formulas
// (negative binomial, beta-binomial, normal with summed variance).
inline double log_marginal_textbook(FamilyId id, double y, double n, double nu, double m) {
  switch (id) {
    case FamilyId::gaussian: {
      const double v = 1.0 / n + 1.0 / nu;
      return -0.5 * std::log(2.0 * std::numbers::pi * v) - 0.5 * (y - m) * (y - m) / v;
    }
    case FamilyId::poisson_gamma: {
      const double z = n * y;
      const double r = nu * m;
      const double p = nu / (n + nu);
      return lgam(z + r) - lgam(r) - lgam(z + 1.0) + r * std::log(p) + z * std::log1p(-p);
    }
    case FamilyId::binomial_beta: {
      const double z = n * y;
      const double a = nu * m;
      const double b = nu * (1.0 - m);
      auto lbeta = [](double p, double q) { return lgam(p) + lgam(q) - lgam(p + q); };
      return lgam(n + 1.0) - lgam(z + 1.0) - lgam(n - z + 1.0) + lbeta(z + a, n - z + b) - lbeta(a, b);
    }
  }
  return 0.0;
}

inline double link_inverse(FamilyId id, double eta) {
  switch (id) {
    case FamilyId::gaussian:
      return eta;
    case FamilyId::poisson_gamma:
      return std::exp(eta);
    case FamilyId::binomial_beta:
      return 1.0 / (1.0 + std::exp(-eta));
  }
  return eta;
}

// sum_k w_k log f(y_k; beta, nu), term by term.
inline double weighted_objective(FamilyId id, std::span<const AreaRecord> data, std::span<const double> w,
                                 std::span<const double> beta, double nu) {
  double total = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (!data[k].sampled || w[k] == 0.0) continue;
    double eta = 0.0;
    for (std::size_t j = 0; j < beta.size(); ++j) eta += beta[j] * data[k].x[j];
    total += w[k] * log_marginal_textbook(id, data[k].y, data[k].n, nu, link_inverse(id, eta));
  }
  return total;
}

inline std::vector<double> gaussian_weights(std::span<const AreaRecord> data, const sveb::Coord& anchor, double b,
                                            long exclude = -1) {
  std::vector<double> w(data.size(), 0.0);
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (!data[k].sampled || static_cast<long>(k) == exclude) continue;
    const double d1 = data[k].u.u1 - anchor.u1;
    const double d2 = data[k].u.u2 - anchor.u2;
    w[k] = std::exp(-(d1 * d1 + d2 * d2) / (2.0 * b * b));
  }
  return w;
}

struct GridResult {
  double best = -std::numeric_limits<double>::infinity();
  double slack = 0.0;
  std::vector<double> arg;  // beta0, beta1, log nu
};

// Dense grid over (beta0, beta1, log nu). slack is the largest objective
// change between the best cell and its face neighbours.
inline GridResult grid_search(const std::function<double(double, double, double)>& obj, double b0lo, double b0hi,
                              double b1lo, double b1hi, double tlo, double thi, int pts) {
  auto at = [](double lo, double hi, int i, int n) { return lo + (hi - lo) * i / (n - 1); };
  std::vector<double> vals(static_cast<std::size_t>(pts) * pts * pts);
  auto idx = [pts](int i, int j, int k) { return (static_cast<std::size_t>(i) * pts + j) * pts + k; };
  GridResult g;
  int bi = 0;
  int bj = 0;
  int bk = 0;
  for (int i = 0; i < pts; ++i) {
    for (int j = 0; j < pts; ++j) {
      for (int k = 0; k < pts; ++k) {
        double v = obj(at(b0lo, b0hi, i, pts), at(b1lo, b1hi, j, pts), at(tlo, thi, k, pts));
        if (!std::isfinite(v)) v = -std::numeric_limits<double>::infinity();
        vals[idx(i, j, k)] = v;
        if (v > g.best) {
          g.best = v;
          bi = i;
          bj = j;
          bk = k;
        }
      }
    }
  }
  const int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (const auto& d : nb) {
    const int i = bi + d[0];
    const int j = bj + d[1];
    const int k = bk + d[2];
    if (i < 0 || j < 0 || k < 0 || i >= pts || j >= pts || k >= pts) continue;
    const double v = vals[idx(i, j, k)];
    if (std::isfinite(v)) g.slack = std::max(g.slack, std::fabs(g.best - v));
  }
  g.arg = {at(b0lo, b0hi, bi, pts), at(b1lo, b1hi, bj, pts), at(tlo, thi, bk, pts)};
  return g;
}

// Synthetic data from a two-stage model with a smooth surface in u, one
// covariate plus intercept.
inline std::vector<AreaRecord> synthetic(const FamilySpec& spec, std::size_t m, std::uint64_t seed, double n = 20.0,
                                         bool varying = true) {
  sveb::RandomStream rng(seed, {77});
  std::vector<AreaRecord> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    AreaRecord& r = out[i];
    r.id = "s" + std::to_string(i);
    r.u = {rng.uniform(), rng.uniform()};
    const double x1 = 2.0 * rng.uniform() - 1.0;
    r.x = {1.0, x1};
    sveb::HyperParams phi;
    if (varying) {
      phi.beta = {r.u.u1 - r.u.u2 - 1.0, std::hypot(r.u.u1, r.u.u2)};
      phi.nu = 20.0 * std::exp(r.u.u1 + r.u.u2 - 1.0);
    } else {
      phi.beta = {0.1, 0.7};
      phi.nu = 50.0;
    }
    if (spec.id == FamilyId::gaussian) phi.nu = 1.0 / (0.2 + 0.3 * r.u.u1);
    r.n = spec.id == FamilyId::gaussian ? 1.0 / (0.3 + 0.4 * rng.uniform()) : n;
    r.y = sveb::sample_area(spec, phi, r.x, r.n, rng).y;
    r.sampled = true;
  }
  return out;
}

}  // namespace oracle
