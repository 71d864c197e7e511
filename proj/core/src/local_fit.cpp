#include "sveb/local_fit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "family_detail.hpp"
#include "sveb/errors.hpp"
#include "sveb/parallel.hpp"
#include "sveb/special_functions.hpp"

namespace sveb {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double kernel_weight(double d, const KernelConfig& cfg) {
  if (!(cfg.bandwidth > 0.0)) throw InvalidInput("kernel bandwidth must be positive");
  if (d < 0.0) throw InvalidInput("kernel distance must be nonnegative");
  const double s = d / cfg.bandwidth;
  return std::exp(-0.5 * s * s);
}

const HyperParams& SvFit::params(std::size_t i) const {
  if (i >= areas.size() || !areas[i]) throw InvalidInput("SvFit: no local fit for requested area");
  return areas[i]->params;
}

std::size_t SvFit::failed_count() const {
  return static_cast<std::size_t>(std::count_if(areas.begin(), areas.end(), [](const auto& a) {
    return a && a->diagnostics.failed;
  }));
}

std::size_t design_width(std::span<const AreaRecord> data) {
  if (data.empty()) throw InvalidInput("empty dataset");
  const std::size_t p = data.front().x.size();
  if (p == 0) throw InvalidInput("records need at least one covariate (the intercept)");
  for (const auto& rec : data) {
    if (rec.x.size() != p) throw InvalidInput("area '" + rec.id + "': covariate length differs from the first record");
  }
  return p;
}

std::vector<double> local_weights(std::span<const AreaRecord> data, const Coord& anchor, const KernelConfig& cfg,
                                  std::optional<std::size_t> exclude) {
  std::vector<double> w(data.size(), 0.0);
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (!data[k].sampled || (exclude && *exclude == k)) continue;
    w[k] = kernel_weight(distance(anchor, data[k].u), cfg);
  }
  return w;
}

double weighted_loglik(const FamilySpec& spec, const HyperParams& phi, std::span<const AreaRecord> data,
                       std::span<const double> weights) {
  if (weights.size() != data.size()) throw InvalidInput("weights / data length mismatch");
  double total = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (!data[k].sampled || weights[k] == 0.0) continue;
    const auto& rec = data[k];
    total += weights[k] * marginal_kernel(spec, rec.y, rec.n, phi.nu, prior_mean(spec, phi, rec.x));
  }
  return total;
}

double local_loglik(const FamilySpec& spec, const HyperParams& phi, std::size_t anchor,
                    std::span<const AreaRecord> data, const KernelConfig& cfg) {
  if (anchor >= data.size()) throw InvalidInput("anchor index out of range");
  const auto w = local_weights(data, data[anchor].u, cfg);
  return weighted_loglik(spec, phi, data, w);
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Sampled records with positive weight, in matrix form.
struct Terms {
  MatrixXd X;
  VectorXd w, y, n, z;
  double weight_sum = 0.0;
  [[nodiscard]] Eigen::Index size() const { return w.size(); }
  [[nodiscard]] Eigen::Index width() const { return X.cols(); }
};

Terms collect_terms(std::span<const AreaRecord> data, std::span<const double> weights) {
  if (weights.size() != data.size()) throw InvalidInput("weights / data length mismatch");
  const std::size_t p = design_width(data);
  std::vector<std::size_t> keep;
  double wsum = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (weights[k] < 0.0 || !std::isfinite(weights[k])) throw InvalidInput("kernel weights must be finite and >= 0");
    if (data[k].sampled && weights[k] > 0.0) {
      keep.push_back(k);
      wsum += weights[k];
    }
  }
  if (wsum < static_cast<double>(p) + 1.0) {
    std::ostringstream msg;
    msg << "effective sample size " << wsum << " is below p + 1 = " << p + 1 << "; use a larger bandwidth";
    throw InsufficientWeight(msg.str());
  }
  Terms t;
  const auto K = static_cast<Eigen::Index>(keep.size());
  t.X.resize(K, static_cast<Eigen::Index>(p));
  t.w.resize(K);
  t.y.resize(K);
  t.n.resize(K);
  t.z.resize(K);
  for (Eigen::Index r = 0; r < K; ++r) {
    const auto& rec = data[keep[static_cast<std::size_t>(r)]];
    for (std::size_t j = 0; j < p; ++j) t.X(r, static_cast<Eigen::Index>(j)) = rec.x[j];
    t.w(r) = weights[keep[static_cast<std::size_t>(r)]];
    t.y(r) = rec.y;
    t.n(r) = rec.n;
    t.z(r) = rec.n * rec.y;
  }
  t.weight_sum = wsum;

  const MatrixXd gram = t.X.transpose() * t.w.asDiagonal() * t.X;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const double top = eig.eigenvalues().maxCoeff();
  if (!(top > 0.0) || eig.eigenvalues().minCoeff() <= 1e-12 * top) {
    throw RankDeficient("kernel-weighted design matrix is singular");
  }
  return t;
}

bool has_intercept_column(const Terms& t, Eigen::Index j) { return (t.X.col(j).array() == 1.0).all(); }

bool converged_step(double obj, double inc, double change, const FitOptions& opts) {
  return std::fabs(inc) <= opts.rel_tol * std::max(1.0, std::fabs(obj)) && change < opts.param_tol;
}

HyperParams to_params(const VectorXd& theta) {
  HyperParams out;
  const Eigen::Index p = theta.size() - 1;
  out.beta.assign(theta.data(), theta.data() + p);
  out.nu = std::exp(theta(p));
  return out;
}

VectorXd to_theta(const HyperParams& phi, Eigen::Index p) {
  if (static_cast<Eigen::Index>(phi.beta.size()) != p) throw InvalidInput("initial beta has the wrong length");
  if (!(phi.nu > 0.0) || !std::isfinite(phi.nu)) throw InvalidInput("initial nu must be positive and finite");
  VectorXd theta(p + 1);
  for (Eigen::Index j = 0; j < p; ++j) theta(j) = phi.beta[static_cast<std::size_t>(j)];
  theta(p) = std::clamp(std::log(phi.nu), std::log(kMinPrecision), std::log(kMaxPrecision));
  return theta;
}

// ---------------------------------------------------------------- gaussian

double gaussian_objective(const Terms& t, const VectorXd& beta, double A) {
  const VectorXd r = t.y - t.X * beta;
  double total = 0.0;
  for (Eigen::Index k = 0; k < t.size(); ++k) {
    const double n = t.n(k);
    total += t.w(k) * (-0.5 * std::log1p(n * A) - 0.5 * r(k) * r(k) / (A + 1.0 / n) + 0.5 * n * t.y(k) * t.y(k));
  }
  return total;
}

// psi(a + d) - psi(a) and psi'(a + d) - psi'(a); exact sums for moderate
// integer d avoid cancellation when a is large.
double digamma_diff(double a, double d) {
  if (d == 0.0) return 0.0;
  if (d > 0.0 && d == std::floor(d) && d <= 256.0) {
    double acc = 0.0;
    for (int j = 0; j < static_cast<int>(d); ++j) acc += 1.0 / (a + j);
    return acc;
  }
  return special::digamma(a + d) - special::digamma(a);
}

double trigamma_diff(double a, double d) {
  if (d == 0.0) return 0.0;
  if (d > 0.0 && d == std::floor(d) && d <= 256.0) {
    double acc = 0.0;
    for (int j = 0; j < static_cast<int>(d); ++j) acc -= 1.0 / ((a + j) * (a + j));
    return acc;
  }
  return special::trigamma(a + d) - special::trigamma(a);
}

// ---------------------------------------------------------------- EM models

// Each model exposes: estep(theta), q(theta), q_derivs(theta, g, H),
// objective(theta), loglik_derivs(theta, g, H). theta = (beta, log nu).

// Gradient and Hessian in (beta, tau) from per-term coefficients of the
// eta-eta, eta-tau and tau-tau second derivatives.
void assemble(const Terms& t, const VectorXd& cg, const VectorXd& cbb, const VectorXd& cbt, double gt, double htt,
              VectorXd& g, MatrixXd& H) {
  const Eigen::Index p = t.width();
  g.resize(p + 1);
  H.resize(p + 1, p + 1);
  g.head(p) = t.X.transpose() * cg;
  g(p) = gt;
  H.topLeftCorner(p, p) = t.X.transpose() * cbb.asDiagonal() * t.X;
  H.col(p).head(p) = t.X.transpose() * cbt;
  H.row(p).head(p) = H.col(p).head(p).transpose();
  H(p, p) = htt;
}

struct PoissonGammaModel {
  const Terms& t;
  VectorXd elog;   // E[log lambda_k]
  VectorXd emean;  // E[lambda_k]

  explicit PoissonGammaModel(const Terms& terms) : t(terms), elog(terms.size()), emean(terms.size()) {}

  void estep(const VectorXd& theta) {
    const Eigen::Index p = t.width();
    const double nu = std::exp(theta(p));
    const VectorXd eta = t.X * theta.head(p);
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      const double shape = t.z(k) + nu * std::exp(eta(k));
      const double rate = t.n(k) + nu;
      elog(k) = special::digamma(shape) - std::log(rate);
      emean(k) = shape / rate;
    }
  }

  double q(const VectorXd& theta) const {
    const Eigen::Index p = t.width();
    const double tau = theta(p);
    const double nu = std::exp(tau);
    const VectorXd eta = t.X * theta.head(p);
    double total = 0.0;
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      const double a = std::exp(tau + eta(k));
      if (!(a > 0.0) || !std::isfinite(a)) return kNegInf;
      total += t.w(k) * (a * tau - special::log_gamma(a) + a * elog(k) - nu * emean(k));
    }
    return total;
  }

  void q_derivs(const VectorXd& theta, VectorXd& g, MatrixXd& H) const {
    const Eigen::Index p = t.width();
    const Eigen::Index K = t.size();
    const double tau = theta(p);
    const double nu = std::exp(tau);
    const VectorXd eta = t.X * theta.head(p);
    VectorXd cg(K), cbb(K), cbt(K);
    double gt = 0.0;
    double htt = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double a = std::exp(tau + eta(k));
      const double h = tau - special::digamma(a) + elog(k);
      const double a2tri = a * a * special::trigamma(a);
      const double w = t.w(k);
      cg(k) = w * h * a;
      cbb(k) = w * (a * h - a2tri);
      cbt(k) = w * (a * h + a - a2tri);
      gt += w * (a * h + a - nu * emean(k));
      htt += w * (a * h + 2.0 * a - a2tri - nu * emean(k));
    }
    assemble(t, cg, cbb, cbt, gt, htt, g, H);
  }

  double objective(const VectorXd& theta) const {
    const Eigen::Index p = t.width();
    const double nu = std::exp(theta(p));
    const VectorXd eta = t.X * theta.head(p);
    double total = 0.0;
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      const double m = std::exp(eta(k));
      const double a = nu * m;
      if (!(a > 0.0) || !std::isfinite(a)) return kNegInf;
      total += t.w(k) * detail::kernel_poisson_gamma(t.z(k), t.n(k), nu, m);
    }
    return total;
  }

  void loglik_derivs(const VectorXd& theta, VectorXd& g, MatrixXd& H) const {
    const Eigen::Index p = t.width();
    const Eigen::Index K = t.size();
    const double tau = theta(p);
    const double nu = std::exp(tau);
    const VectorXd eta = t.X * theta.head(p);
    VectorXd cg(K), cbb(K), cbt(K);
    double gt = 0.0;
    double htt = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double a = std::exp(tau + eta(k));
      const double z = t.z(k);
      const double n = t.n(k);
      const double la = digamma_diff(a, z) - std::log1p(n / nu);
      const double laa = trigamma_diff(a, z);
      const double lat = n / (n + nu);
      const double lt = (a * n - z * nu) / (n + nu);
      const double ltt = -nu * n * (z + a) / ((n + nu) * (n + nu));
      const double w = t.w(k);
      cg(k) = w * la * a;
      cbb(k) = w * (laa * a * a + la * a);
      cbt(k) = w * (laa * a * a + la * a + lat * a);
      gt += w * (la * a + lt);
      htt += w * (laa * a * a + la * a + 2.0 * lat * a + ltt);
    }
    assemble(t, cg, cbb, cbt, gt, htt, g, H);
  }
};

struct BinomialBetaModel {
  const Terms& t;
  VectorXd elog_p;  // E[log p_k]
  VectorXd elog_q;  // E[log(1 - p_k)]

  explicit BinomialBetaModel(const Terms& terms) : t(terms), elog_p(terms.size()), elog_q(terms.size()) {}

  void estep(const VectorXd& theta) {
    const Eigen::Index p = t.width();
    const double nu = std::exp(theta(p));
    const VectorXd eta = t.X * theta.head(p);
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      const double m = detail::logistic(eta(k));
      const double mc = detail::logistic(-eta(k));
      const double total = special::digamma(t.n(k) + nu);
      elog_p(k) = special::digamma(t.z(k) + nu * m) - total;
      elog_q(k) = special::digamma(t.n(k) - t.z(k) + nu * mc) - total;
    }
  }

  double q(const VectorXd& theta) const {
    const Eigen::Index p = t.width();
    const double nu = std::exp(theta(p));
    const VectorXd eta = t.X * theta.head(p);
    double total = 0.0;
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      const double a = nu * detail::logistic(eta(k));
      const double b = nu * detail::logistic(-eta(k));
      if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a + b)) return kNegInf;
      total += t.w(k) * (a * elog_p(k) + b * elog_q(k) - special::log_beta(a, b));
    }
    return total;
  }

  void q_derivs(const VectorXd& theta, VectorXd& g, MatrixXd& H) const {
    const Eigen::Index p = t.width();
    const Eigen::Index K = t.size();
    const double nu = std::exp(theta(p));
    const VectorXd eta = t.X * theta.head(p);
    const double psi_nu = special::digamma(nu);
    const double tri_nu = special::trigamma(nu);
    VectorXd cg(K), cbb(K), cbt(K);
    double gt = 0.0;
    double htt = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double m = detail::logistic(eta(k));
      const double mc = detail::logistic(-eta(k));
      const double a = nu * m;
      const double b = nu * mc;
      const double s = a * mc;  // d a / d eta
      const double ga = elog_p(k) - special::digamma(a) + psi_nu;
      const double gb = elog_q(k) - special::digamma(b) + psi_nu;
      const double gaa = tri_nu - special::trigamma(a);
      const double gbb = tri_nu - special::trigamma(b);
      const double gab = tri_nu;
      const double w = t.w(k);
      cg(k) = w * (ga - gb) * s;
      cbb(k) = w * ((gaa - 2.0 * gab + gbb) * s * s + (ga - gb) * s * (mc - m));
      cbt(k) = w * s * ((gaa * a + gab * b) - (gab * a + gbb * b) + (ga - gb));
      gt += w * (ga * a + gb * b);
      htt += w * (gaa * a * a + 2.0 * gab * a * b + gbb * b * b + ga * a + gb * b);
    }
    assemble(t, cg, cbb, cbt, gt, htt, g, H);
  }

  double objective(const VectorXd& theta) const {
    const Eigen::Index p = t.width();
    const double nu = std::exp(theta(p));
    const VectorXd eta = t.X * theta.head(p);
    double total = 0.0;
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      const double m = detail::logistic(eta(k));
      const double mc = detail::logistic(-eta(k));
      if (!(nu * m > 0.0) || !(nu * mc > 0.0)) return kNegInf;
      total += t.w(k) * detail::kernel_binomial_beta(t.z(k), t.n(k), nu, m, mc);
    }
    return total;
  }

  void loglik_derivs(const VectorXd& theta, VectorXd& g, MatrixXd& H) const {
    const Eigen::Index p = t.width();
    const Eigen::Index K = t.size();
    const double nu = std::exp(theta(p));
    const VectorXd eta = t.X * theta.head(p);
    VectorXd cg(K), cbb(K), cbt(K);
    double gt = 0.0;
    double htt = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double m = detail::logistic(eta(k));
      const double mc = detail::logistic(-eta(k));
      const double a = nu * m;
      const double b = nu * mc;
      const double s = a * mc;
      const double z = t.z(k);
      const double n = t.n(k);
      const double total = digamma_diff(nu, n);
      const double total2 = trigamma_diff(nu, n);
      const double la = digamma_diff(a, z) - total;
      const double lb = digamma_diff(b, n - z) - total;
      const double laa = trigamma_diff(a, z) - total2;
      const double lbb = trigamma_diff(b, n - z) - total2;
      const double lab = -total2;
      const double w = t.w(k);
      cg(k) = w * (la - lb) * s;
      cbb(k) = w * ((laa - 2.0 * lab + lbb) * s * s + (la - lb) * s * (mc - m));
      cbt(k) = w * s * ((laa * a + lab * b) - (lab * a + lbb * b) + (la - lb));
      gt += w * (la * a + lb * b);
      htt += w * (laa * a * a + 2.0 * lab * a * b + lbb * b * b + la * a + lb * b);
    }
    assemble(t, cg, cbb, cbt, gt, htt, g, H);
  }
};

// Ascent direction solving (-H) d = g, with tau optionally held fixed and a
// Levenberg shift when -H is not positive definite.
VectorXd newton_direction(const MatrixXd& H, const VectorXd& g, bool fix_last) {
  const Eigen::Index P = g.size();
  const Eigen::Index free = fix_last ? P - 1 : P;
  MatrixXd A = -H.topLeftCorner(free, free);
  const VectorXd rhs = g.head(free);
  double shift = 0.0;
  const double scale = std::max(1.0, A.diagonal().cwiseAbs().maxCoeff());
  VectorXd d = VectorXd::Zero(P);
  for (int attempt = 0; attempt < 60; ++attempt) {
    MatrixXd Ashift = A;
    Ashift.diagonal().array() += shift;
    Eigen::LLT<MatrixXd> llt(Ashift);
    if (llt.info() == Eigen::Success) {
      d.head(free) = llt.solve(rhs);
      if (d.allFinite()) return d;
    }
    shift = shift == 0.0 ? 1e-8 * scale : shift * 10.0;
  }
  d.head(free) = rhs / scale;
  return d;
}

// One Newton step on f with step halving; tau is clamped to its bounds and
// held fixed when it sits on a bound with the gradient pushing outward.
// Returns false (theta untouched) when no halving improves f.
template <class Value, class Derivs>
bool newton_ascent_step(const Value& f, const Derivs& derivs, VectorXd& theta, double& value, double tau_lo,
                        double tau_hi) {
  const Eigen::Index P = theta.size();
  VectorXd g;
  MatrixXd H;
  derivs(theta, g, H);
  if (!g.allFinite() || !H.allFinite()) return false;
  const double tau = theta(P - 1);
  const bool fix_tau = (tau >= tau_hi && g(P - 1) > 0.0) || (tau <= tau_lo && g(P - 1) < 0.0);
  const VectorXd d = newton_direction(H, g, fix_tau);
  double step = 1.0;
  for (int h = 0; h < 60; ++h) {
    VectorXd cand = theta + step * d;
    cand(P - 1) = std::clamp(cand(P - 1), tau_lo, tau_hi);
    const double fc = f(cand);
    if (fc >= value) {
      theta = std::move(cand);
      value = fc;
      return true;
    }
    step *= 0.5;
  }
  return false;
}

// A single safeguarded Newton step already increases Q, which is all the
// ascent argument needs; iterating the M-step to convergence costs ~3x more
// for the same fixed point.
template <class Model>
void maximize_q(const Model& model, VectorXd& theta, double tau_lo, double tau_hi) {
  double q = model.q(theta);
  newton_ascent_step([&](const VectorXd& v) { return model.q(v); },
                     [&](const VectorXd& v, VectorXd& g, MatrixXd& H) { model.q_derivs(v, g, H); }, theta, q,
                     tau_lo, tau_hi);
}

template <class Model>
LocalFit run_em(const Terms& t, const HyperParams& init, const FitOptions& opts) {
  Model model(t);
  const Eigen::Index p = t.width();
  const double tau_lo = std::log(kMinPrecision);
  const double tau_hi = std::log(kMaxPrecision);
  VectorXd theta = to_theta(init, p);
  double obj = model.objective(theta);
  if (!std::isfinite(obj)) throw NumericalFailure("local likelihood is not finite at the starting point");

  // One EM update theta -> F(theta).
  auto em_map = [&](const VectorXd& from) {
    model.estep(from);
    VectorXd to = from;
    maximize_q(model, to, tau_lo, tau_hi);
    return to;
  };

  // SQUAREM extrapolation (SqS3 step length) with a plain double EM step as
  // the monotone fallback, then an optional observed-likelihood Newton step.
  FitDiagnostics diag;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const VectorXd t1 = em_map(theta);
    const VectorXd t2 = em_map(t1);
    VectorXd next = t2;
    double next_obj = model.objective(t2);
    const VectorXd r = t1 - theta;
    const VectorXd v = t2 - t1 - r;
    const double vn = v.norm();
    if (vn > 1e-14 * std::max(1.0, r.norm())) {
      const double alpha = std::min(-1.0, -r.norm() / vn);
      VectorXd jump = theta - 2.0 * alpha * r + alpha * alpha * v;
      jump(p) = std::clamp(jump(p), tau_lo, tau_hi);
      if (jump.allFinite() && std::isfinite(model.objective(jump))) {
        const VectorXd stab = em_map(jump);
        const double stab_obj = model.objective(stab);
        if (std::isfinite(stab_obj) && stab_obj > next_obj) {
          next = stab;
          next_obj = stab_obj;
        }
      }
    }
    if (!std::isfinite(next_obj)) throw NumericalFailure("local likelihood became non-finite during EM");
    // EM slows to a crawl where the likelihood flattens (nu drifting to its
    // cap); a Newton step on the observed objective, kept only if it helps,
    // fixes that without giving up monotonicity.
    {
      VectorXd polished = next;
      double polished_obj = next_obj;
      if (newton_ascent_step([&](const VectorXd& v) { return model.objective(v); },
                             [&](const VectorXd& v, VectorXd& g, MatrixXd& H) { model.loglik_derivs(v, g, H); },
                             polished, polished_obj, tau_lo, tau_hi) &&
          polished_obj > next_obj) {
        next = std::move(polished);
        next_obj = polished_obj;
      }
    }
    const double change = (next - theta).cwiseAbs().maxCoeff();
    const double inc = next_obj - obj;
    theta = next;
    obj = next_obj;
    diag.iterations = it;
    diag.last_increment = inc;
    if (converged_step(obj, inc, change, opts)) {
      diag.converged = true;
      break;
    }
  }
  diag.objective = obj;
  const double tau = theta(p);
  diag.at_bound = tau >= tau_hi - 1e-12 || tau <= tau_lo + 1e-12;
  if (!diag.converged) diag.message = "EM reached the iteration limit";
  if (!theta.allFinite()) throw NumericalFailure("EM produced non-finite parameters");
  return {to_params(theta), diag};
}

}  // namespace

LocalFit fit_weighted_gaussian(std::span<const AreaRecord> data, std::span<const double> weights,
                               const HyperParams& init, const FitOptions& opts) {
  const Terms t = collect_terms(data, weights);
  const Eigen::Index p = t.width();
  VectorXd beta = to_theta(init, p).head(p);
  double A = std::max(1.0 / init.nu, kMinRandomEffectVariance);
  double obj = gaussian_objective(t, beta, A);
  if (!std::isfinite(obj)) throw NumericalFailure("local likelihood is not finite at the starting point");

  FitDiagnostics diag;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const VectorXd V = (A + t.n.cwiseInverse().array()).matrix();
    const VectorXd r = t.y - t.X * beta;
    const VectorXd wv = t.w.cwiseQuotient(V);
    const MatrixXd info_beta = t.X.transpose() * wv.asDiagonal() * t.X;
    const VectorXd score_beta = t.X.transpose() * wv.cwiseProduct(r);
    const VectorXd dbeta = info_beta.ldlt().solve(score_beta);
    if (!dbeta.allFinite()) throw RankDeficient("kernel-weighted design matrix is singular");
    const VectorXd V2 = V.cwiseProduct(V);
    const double score_A = (t.w.array() * (r.array().square() / V2.array() - V.array().inverse())).sum();
    const double info_A = t.w.cwiseQuotient(V2).sum();
    const double dA = std::max(A + score_A / info_A, kMinRandomEffectVariance) - A;

    double step = 1.0;
    bool accepted = false;
    VectorXd beta_c;
    double A_c = A;
    double obj_c = obj;
    for (int h = 0; h < 60; ++h) {
      beta_c = beta + step * dbeta;
      A_c = A + step * dA;
      obj_c = gaussian_objective(t, beta_c, A_c);
      if (obj_c >= obj) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    diag.iterations = it;
    if (!accepted) {
      // No ascent available at working precision: stationary point.
      diag.last_increment = 0.0;
      diag.converged = true;
      break;
    }
    const double change = std::max((beta_c - beta).cwiseAbs().maxCoeff(), std::fabs(std::log(A_c / A)));
    const double inc = obj_c - obj;
    beta = beta_c;
    A = A_c;
    obj = obj_c;
    diag.last_increment = inc;
    if (converged_step(obj, inc, change, opts)) {
      diag.converged = true;
      break;
    }
  }
  diag.objective = obj;
  diag.at_bound = A <= kMinRandomEffectVariance * (1.0 + 1e-9);
  if (!diag.converged) diag.message = "Fisher scoring reached the iteration limit";

  HyperParams out;
  out.beta.assign(beta.data(), beta.data() + p);
  out.nu = 1.0 / A;
  return {out, diag};
}

LocalFit fit_weighted_poisson_gamma(std::span<const AreaRecord> data, std::span<const double> weights,
                                    const HyperParams& init, const FitOptions& opts) {
  const Terms t = collect_terms(data, weights);
  return run_em<PoissonGammaModel>(t, init, opts);
}

LocalFit fit_weighted_binomial_beta(std::span<const AreaRecord> data, std::span<const double> weights,
                                    const HyperParams& init, const FitOptions& opts) {
  const Terms t = collect_terms(data, weights);
  return run_em<BinomialBetaModel>(t, init, opts);
}

LocalFit fit_weighted(const FamilySpec& spec, std::span<const AreaRecord> data, std::span<const double> weights,
                      const HyperParams& init, const FitOptions& opts) {
  switch (spec.id) {
    case FamilyId::gaussian:
      return fit_weighted_gaussian(data, weights, init, opts);
    case FamilyId::poisson_gamma:
      return fit_weighted_poisson_gamma(data, weights, init, opts);
    case FamilyId::binomial_beta:
      return fit_weighted_binomial_beta(data, weights, init, opts);
  }
  throw InvalidInput("unknown family");
}

HyperParams initial_params(const FamilySpec& spec, std::span<const AreaRecord> data,
                           std::span<const double> weights) {
  const Terms t = collect_terms(data, weights);
  const Eigen::Index p = t.width();
  const double wsum = t.w.sum();
  double ybar = t.w.dot(t.y) / wsum;
  const double exposure = t.w.dot(t.n);
  if (spec.id == FamilyId::poisson_gamma) {
    ybar = std::max(ybar, 0.5 / exposure);
  } else if (spec.id == FamilyId::binomial_beta) {
    const double eps = std::min(0.5 / exposure, 0.25);
    ybar = std::clamp(ybar, eps, 1.0 - eps);
  }

  HyperParams out;
  out.beta.assign(static_cast<std::size_t>(p), 0.0);
  Eigen::Index intercept = -1;
  for (Eigen::Index j = 0; j < p && intercept < 0; ++j) {
    if (has_intercept_column(t, j)) intercept = j;
  }
  if (intercept >= 0) {
    out.beta[static_cast<std::size_t>(intercept)] = inverse_link(spec, ybar);
  } else {
    VectorXd target(t.size());
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      double yk = t.y(k);
      if (spec.id == FamilyId::poisson_gamma) yk = (t.z(k) + 0.5) / t.n(k);
      if (spec.id == FamilyId::binomial_beta) yk = (t.z(k) + 0.5) / (t.n(k) + 1.0);
      target(k) = inverse_link(spec, yk);
    }
    const MatrixXd gram = t.X.transpose() * t.w.asDiagonal() * t.X;
    const VectorXd b = gram.ldlt().solve(t.X.transpose() * t.w.cwiseProduct(target));
    for (Eigen::Index j = 0; j < p; ++j) out.beta[static_cast<std::size_t>(j)] = b(j);
  }

  const double q = variance_fn(spec, ybar);
  const double spread = t.w.dot((t.y.array() - ybar).square().matrix()) / wsum;
  const double noise = (t.w.array() * q / t.n.array()).sum() / wsum;
  double prior_var = std::max(spread - noise, 0.05 * spread);
  if (!(prior_var > 0.0)) prior_var = 1e-4 * std::max(q, 1e-12);
  const double nu = spec.v2 + q / prior_var;
  out.nu = std::clamp(nu, kMinPrecision, kMaxPrecision);
  return out;
}

LocalFit fit_local_gaussian(std::size_t anchor, std::span<const AreaRecord> data, const KernelConfig& cfg,
                            const HyperParams& init, const FitOptions& opts) {
  if (anchor >= data.size()) throw InvalidInput("anchor index out of range");
  return fit_weighted_gaussian(data, local_weights(data, data[anchor].u, cfg), init, opts);
}

LocalFit fit_local_poisson_gamma(std::size_t anchor, std::span<const AreaRecord> data, const KernelConfig& cfg,
                                 const HyperParams& init, const FitOptions& opts) {
  if (anchor >= data.size()) throw InvalidInput("anchor index out of range");
  return fit_weighted_poisson_gamma(data, local_weights(data, data[anchor].u, cfg), init, opts);
}

LocalFit fit_local_binomial_beta(std::size_t anchor, std::span<const AreaRecord> data, const KernelConfig& cfg,
                                 const HyperParams& init, const FitOptions& opts) {
  if (anchor >= data.size()) throw InvalidInput("anchor index out of range");
  return fit_weighted_binomial_beta(data, local_weights(data, data[anchor].u, cfg), init, opts);
}

LocalFit fit_local(const FamilySpec& spec, std::size_t anchor, std::span<const AreaRecord> data,
                   const KernelConfig& cfg, const HyperParams& init, const FitOptions& opts) {
  if (anchor >= data.size()) throw InvalidInput("anchor index out of range");
  return fit_weighted(spec, data, local_weights(data, data[anchor].u, cfg), init, opts);
}

namespace {

std::vector<double> unit_weights(std::span<const AreaRecord> data, std::optional<std::size_t> exclude) {
  std::vector<double> w(data.size(), 0.0);
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (data[k].sampled && !(exclude && *exclude == k)) w[k] = 1.0;
  }
  return w;
}

LocalFit fit_constant_excluding(const FamilySpec& spec, std::span<const AreaRecord> data,
                                std::optional<std::size_t> exclude, const FitOptions& opts) {
  const auto w = unit_weights(data, exclude);
  return fit_weighted(spec, data, w, initial_params(spec, data, w), opts);
}

}  // namespace

LocalFit fit_local_loo(const FamilySpec& spec, std::size_t j, std::span<const AreaRecord> data,
                       const KernelConfig& cfg, const std::optional<HyperParams>& init, const FitOptions& opts) {
  if (j >= data.size()) throw InvalidInput("area index out of range");
  const HyperParams start = init ? *init : fit_constant_excluding(spec, data, j, opts).params;
  return fit_weighted(spec, data, local_weights(data, data[j].u, cfg, j), start, opts);
}

LocalFit fit_constant(const FamilySpec& spec, std::span<const AreaRecord> data, const FitOptions& opts) {
  for (const auto& rec : data) validate_record(spec, rec);
  return fit_constant_excluding(spec, data, std::nullopt, opts);
}

SvFit fit_all(const FamilySpec& spec, std::span<const AreaRecord> data, const KernelConfig& cfg,
              const FitOptions& opts) {
  const LocalFit global = fit_constant(spec, data, opts);
  return fit_all(spec, data, cfg, global.params, opts);
}

SvFit fit_all(const FamilySpec& spec, std::span<const AreaRecord> data, const KernelConfig& cfg,
              const HyperParams& global, const FitOptions& opts) {
  if (!(cfg.bandwidth > 0.0)) throw InvalidInput("kernel bandwidth must be positive");
  SvFit fit;
  fit.spec = spec;
  fit.bandwidth = cfg.bandwidth;
  fit.global = global;
  fit.areas.assign(data.size(), std::nullopt);

  std::vector<std::size_t> sampled;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].sampled) sampled.push_back(i);
  }
  if (sampled.empty()) throw InvalidInput("no sampled areas");

  parallel_for(sampled.size(), opts.workers, [&](std::size_t s) {
    const std::size_t i = sampled[s];
    try {
      fit.areas[i] = fit_local(spec, i, data, cfg, global, opts);
    } catch (const NumericalFailure& e) {
      LocalFit failed{global, {}};
      failed.diagnostics.failed = true;
      failed.diagnostics.message = e.what();
      fit.areas[i] = std::move(failed);
    }
  });
  if (fit.failed_count() == sampled.size()) {
    throw NumericalFailure("every local fit failed: " + fit.areas[sampled.front()]->diagnostics.message);
  }
  return fit;
}

}  // namespace sveb
