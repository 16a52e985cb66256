#include "ggpm/inference.hpp"

namespace ggpm {

namespace {

Vec expansion_points(const Likelihood& lik, const Vec& y, const InferOpts& opts) {
  const int n = static_cast<int>(y.size());
  switch (opts.expansion) {
    case TaylorExpansion::Agnostic:
      return Vec::Zero(n);
    case TaylorExpansion::Explicit:
      if (opts.explicit_expansion.size() != n)
        throw DimensionError("explicit expansion vector has wrong length");
      return opts.explicit_expansion;
    case TaylorExpansion::Canonical: {
      Vec e(n);
      for (int i = 0; i < n; ++i) e[i] = lik.canonical_expansion_point(y[i]);
      return e;
    }
  }
  throw Error("unreachable expansion kind");
}

}  // namespace

InferenceResult taylor_infer(const Likelihood& lik, const KernelSpec& kernel,
                             const Mat& x, const Vec& y, const InferOpts& opts) {
  const int n = static_cast<int>(y.size());
  if (x.rows() != n) throw DimensionError("taylor_infer: X/y size mismatch");
  for (int i = 0; i < n; ++i) lik.validate(y[i]);

  const Vec eta = expansion_points(lik, y, opts);
  Vec u(n), winv(n), ll(n);
  for (int i = 0; i < n; ++i) {
    const auto d = lik.derivative_functions(y[i], eta[i]);
    if (!(d.winv > 0.0))
      throw NegativeCurvatureError(
          "non-positive curvature at expansion point (index " + std::to_string(i) + ")", i);
    u[i] = d.u;
    winv[i] = d.winv;
    ll[i] = lik.log_likelihood_raw(y[i], eta[i]);
  }
  const Vec t = eta + u.cwiseQuotient(winv);
  const Vec nu = winv.cwiseProduct(eta) + u;

  const Mat k = gram(kernel, x);
  CommonSolver solver(k, winv);
  const Vec alpha = solver.alpha(nu);

  InferenceResult res;
  res.diagnostics.method = "taylor";
  res.diagnostics.iterations = 1;
  res.log_marginal = -0.5 * t.dot(alpha) - 0.5 * solver.logdet_i_plus_sk() + ll.sum() +
                     0.5 * u.cwiseProduct(u).cwiseQuotient(winv).sum();
  res.posterior.mean = k * alpha;
  res.posterior.cov = solver.posterior_cov();
  res.posterior.common = CommonForm{winv, nu};

  if (!opts.want_gradients) return res;

  const auto dk = gram_gradients(kernel, x);
  const int nh = static_cast<int>(dk.size());
  res.grad = Vec::Zero(nh + 1);
  for (int j = 0; j < nh; ++j)
    res.grad[j] = 0.5 * alpha.dot(dk[j] * alpha) - 0.5 * solver.trace_solve(dk[j]);

  if (lik.has_free_dispersion()) {
    const double phi = lik.dispersion();
    // diag of (K+W)^{-1}
    Vec r_diag(n);
    {
      Mat r = Mat::Identity(n, n);
      for (int i = 0; i < n; ++i) r_diag[i] = solver.solve_kw(r.col(i))[i];
    }
    double dlogq = 0.0;
    Vec dt(n);
    for (int i = 0; i < n; ++i) {
      const double w = 1.0 / winv[i];
      const double dwinv = lik.dwinv_dphi(y[i], eta[i]);
      const double dw = -dwinv * w * w;
      const double du = lik.du_dphi(y[i], eta[i]);
      dt[i] = w * du + u[i] * dw;
      // r(phi) pieces
      dlogq += lik.dloglik_dphi(y[i], eta[i]) +
               0.5 * (dw * u[i] * u[i] + 2.0 * w * u[i] * du) + 0.5 * dw * winv[i];
      // quadratic and determinant pieces
      dlogq += 0.5 * alpha[i] * alpha[i] * dw - 0.5 * r_diag[i] * dw;
      // expansion-point chain (canonical points of some families move with phi)
      if (opts.expansion == TaylorExpansion::Canonical) {
        const double deta = lik.expansion_point_dphi(y[i]);
        if (deta != 0.0) {
          const double wprime = (1.0 / (winv[i] * winv[i])) * lik.third_eta_derivative(y[i], eta[i]);
          const double zu = alpha[i] - u[i];
          dlogq += wprime * (0.5 * zu * zu - 0.5 * r_diag[i] + 0.5 * winv[i]) * deta;
        }
      }
    }
    dlogq -= alpha.dot(dt);
    res.grad[nh] = dlogq * phi;  // chain rule to log-dispersion
  }
  return res;
}

}  // namespace ggpm
