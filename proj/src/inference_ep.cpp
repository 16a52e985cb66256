#include "ggpm/inference.hpp"

namespace ggpm {

namespace {

// E_tilted[ d/dphi log p(y|theta(eta)) ] under the final cavity.
double tilted_dphi(const Likelihood& lik, double y, double mu, double s2,
                   const GaussianExpectationPlan& plan) {
  const double sd = std::sqrt(s2);
  auto eval = [&](int order) {
    const QuadNodes& q = gauss_hermite(order);
    double zmax = -std::numeric_limits<double>::infinity();
    Vec a(order), eta(order);
    for (int i = 0; i < order; ++i) {
      eta[i] = mu + sd * q.x[i];
      a[i] = std::log(q.w[i]) + lik.log_likelihood_raw(y, eta[i]);
      zmax = std::max(zmax, a[i]);
    }
    double z = 0.0, acc = 0.0;
    for (int i = 0; i < order; ++i) {
      const double w = std::exp(a[i] - zmax);
      z += w;
      acc += w * lik.dloglik_dphi(y, eta[i]);
    }
    return acc / z;
  };
  int order = plan.order;
  double prev = eval(order);
  if (!plan.adaptive) return prev;
  while (true) {
    const int next = 2 * order + 1;
    if (next > plan.max_order) return prev;  // best effort; validated by FD tests
    const double cur = eval(next);
    if (std::abs(cur - prev) <= plan.tol * std::max(1.0, std::abs(cur))) return cur;
    prev = cur;
    order = next;
  }
}

}  // namespace

InferenceResult ep_infer(const Likelihood& lik, const KernelSpec& kernel, const Mat& x,
                         const Vec& y, const InferOpts& opts) {
  const int n = static_cast<int>(y.size());
  if (x.rows() != n) throw DimensionError("ep_infer: X/y size mismatch");
  for (int i = 0; i < n; ++i) lik.validate(y[i]);

  const Mat k = gram(kernel, x);
  Vec tau = Vec::Zero(n), nu = Vec::Zero(n);
  Mat sigma = k;
  Vec mu = Vec::Zero(n);
  if (opts.ep.init_sites) {
    tau = opts.ep.init_sites->first;
    nu = opts.ep.init_sites->second;
    CommonSolver s0(k, tau);
    sigma = s0.posterior_cov();
    mu = sigma * nu;
  }

  InferenceResult res;
  res.diagnostics.method = "ep";

  const double damp = opts.ep.damping;
  bool converged = false;
  int sweep = 0;
  for (; sweep < opts.ep.max_sweeps; ++sweep) {
    double max_delta = 0.0;
    for (int i = 0; i < n; ++i) {
      const double tau_cav = 1.0 / sigma(i, i) - tau[i];
      const double nu_cav = mu[i] / sigma(i, i) - nu[i];
      if (!(tau_cav > 1e-12)) {
        ++res.diagnostics.skipped_site_updates;
        continue;
      }
      TiltedMoments tm;
      try {
        tm = tilted_moments(lik, y[i], nu_cav / tau_cav, 1.0 / tau_cav, opts.quad);
      } catch (const Error&) {
        ++res.diagnostics.skipped_site_updates;
        continue;
      }
      if (!(tm.var > 0.0)) {
        ++res.diagnostics.skipped_site_updates;
        continue;
      }
      const double tau_full = 1.0 / tm.var - tau_cav;
      const double nu_full = tm.mean / tm.var - nu_cav;
      const double tau_new = (1.0 - damp) * tau[i] + damp * tau_full;
      const double nu_new = (1.0 - damp) * nu[i] + damp * nu_full;
      const double dtau = tau_new - tau[i];
      // Sites may carry negative precision (non-log-concave likelihoods) as
      // long as the site+cavity product and the global posterior stay proper.
      if (tau_cav + tau_new <= 1e-12 || 1.0 + dtau * sigma(i, i) <= 1e-12) {
        ++res.diagnostics.skipped_site_updates;
        continue;
      }
      max_delta = std::max({max_delta, std::abs(dtau), std::abs(nu_new - nu[i])});
      // rank-one refresh of the posterior
      const Vec si = sigma.col(i);
      sigma -= (dtau / (1.0 + dtau * sigma(i, i))) * si * si.transpose();
      tau[i] = tau_new;
      nu[i] = nu_new;
      mu = sigma * nu;
    }
    // full recompute for numerical hygiene
    CommonSolver s(k, tau);
    sigma = s.posterior_cov();
    mu = sigma * nu;
    if (max_delta < opts.ep.tol) {
      converged = true;
      ++sweep;
      break;
    }
  }

  res.diagnostics.iterations = sweep;
  res.diagnostics.converged = converged;

  CommonSolver solver(k, tau);
  // cavities at the converged sites
  Vec mu_cav(n), s2_cav(n), logzhat(n);
  bool cavity_ok = true;
  for (int i = 0; i < n; ++i) {
    const double tau_cav = 1.0 / sigma(i, i) - tau[i];
    const double nu_cav = mu[i] / sigma(i, i) - nu[i];
    if (!(tau_cav > 0.0)) {
      cavity_ok = false;
      mu_cav[i] = mu[i];
      s2_cav[i] = sigma(i, i);
      logzhat[i] = 0.0;
      continue;
    }
    s2_cav[i] = 1.0 / tau_cav;
    mu_cav[i] = nu_cav / tau_cav;
    try {
      logzhat[i] = tilted_moments(lik, y[i], mu_cav[i], s2_cav[i], opts.quad).log_z;
    } catch (const ConvergenceError&) {
      // extreme tilts: fall back to the highest fixed order
      GaussianExpectationPlan fallback{opts.quad.max_order, false, 0.0, opts.quad.max_order};
      logzhat[i] = tilted_moments(lik, y[i], mu_cav[i], s2_cav[i], fallback).log_z;
      res.diagnostics.converged = false;
    }
  }
  if (!cavity_ok) res.diagnostics.converged = false;

  double log_z = 0.5 * nu.dot(mu) - 0.5 * solver.logdet_i_plus_sk();
  for (int i = 0; i < n; ++i) {
    const double denom = 1.0 + tau[i] * s2_cav[i];
    log_z += logzhat[i] + 0.5 * std::log(denom) +
             0.5 *
                 (tau[i] * mu_cav[i] * mu_cav[i] - 2.0 * mu_cav[i] * nu[i] -
                  s2_cav[i] * nu[i] * nu[i]) /
                 denom;
  }
  res.log_marginal = log_z;
  res.posterior.mean = mu;
  res.posterior.cov = sigma;
  res.posterior.common = CommonForm{tau, nu};
  res.ep_site_prec = tau;
  res.ep_site_nu = nu;

  if (!opts.want_gradients) return res;

  // fixed-site derivatives: only the Gaussian-form terms move with the kernel
  const Vec z = solver.alpha(nu);
  const auto dk = gram_gradients(kernel, x);
  const int nh = static_cast<int>(dk.size());
  res.grad = Vec::Zero(nh + 1);
  for (int j = 0; j < nh; ++j)
    res.grad[j] = 0.5 * z.dot(dk[j] * z) - 0.5 * solver.trace_solve(dk[j]);

  if (lik.has_free_dispersion()) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      acc += tilted_dphi(lik, y[i], mu_cav[i], s2_cav[i], opts.quad);
    res.grad[nh] = acc * lik.dispersion();
  }
  return res;
}

}  // namespace ggpm
