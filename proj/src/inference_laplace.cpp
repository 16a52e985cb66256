#include <Eigen/LU>

#include "ggpm/inference.hpp"

namespace ggpm {

namespace {

double posterior_objective(const Likelihood& lik, const Vec& y, const Vec& eta,
                           const Vec& alpha) {
  double ll = 0.0;
  for (int i = 0; i < eta.size(); ++i) ll += lik.log_likelihood_raw(y[i], eta[i]);
  return ll - 0.5 * alpha.dot(eta);
}

}  // namespace

InferenceResult laplace_infer(const Likelihood& lik, const KernelSpec& kernel,
                              const Mat& x, const Vec& y, const InferOpts& opts) {
  const int n = static_cast<int>(y.size());
  if (x.rows() != n) throw DimensionError("laplace_infer: X/y size mismatch");
  for (int i = 0; i < n; ++i) lik.validate(y[i]);

  const Mat k = gram(kernel, x);
  Vec alpha = Vec::Zero(n);
  Vec eta = Vec::Zero(n);
  double psi = posterior_objective(lik, y, eta, alpha);

  Vec u(n), winv(n);
  bool nonconcave = false;
  bool converged = false;
  int iter = 0;
  for (; iter < opts.newton.max_iter; ++iter) {
    for (int i = 0; i < n; ++i) {
      const auto d = lik.derivative_functions(y[i], eta[i]);
      u[i] = d.u;
      winv[i] = d.winv;
      if (d.winv <= 0.0) nonconcave = true;
    }
    if ((u - alpha).lpNorm<Eigen::Infinity>() < opts.newton.tol) {
      converged = true;
      break;
    }
    const Vec d_clamped = winv.cwiseMax(1e-10);
    CommonSolver step_solver(k, d_clamped);
    const Vec alpha_new = step_solver.alpha(d_clamped.cwiseProduct(eta) + u);

    // backtracking on the unnormalized log posterior
    double s = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      const Vec alpha_try = alpha + s * (alpha_new - alpha);
      const Vec eta_try = k * alpha_try;
      const double psi_try = posterior_objective(lik, y, eta_try, alpha_try);
      if (std::isfinite(psi_try) && psi_try > psi - 1e-13 * std::abs(psi)) {
        alpha = alpha_try;
        eta = eta_try;
        psi = psi_try;
        accepted = true;
        break;
      }
      s *= 0.5;
    }
    if (!accepted) break;  // stalled; report with the best point found
  }

  // curvature at the final point (unclamped)
  for (int i = 0; i < n; ++i) {
    const auto d = lik.derivative_functions(y[i], eta[i]);
    u[i] = d.u;
    winv[i] = d.winv;
  }
  nonconcave = nonconcave || (winv.array() <= 0.0).any();

  CommonSolver solver(k, winv);
  InferenceResult res;
  res.diagnostics.method = "laplace";
  res.diagnostics.iterations = iter;
  res.diagnostics.converged = converged;
  res.diagnostics.nonconcave = nonconcave;

  double ll = 0.0;
  for (int i = 0; i < n; ++i) ll += lik.log_likelihood_raw(y[i], eta[i]);
  res.log_marginal = ll - 0.5 * alpha.dot(eta) - 0.5 * solver.logdet_i_plus_sk();
  res.posterior.mean = eta;
  res.posterior.cov = solver.posterior_cov();
  res.posterior.common = CommonForm{winv, winv.cwiseProduct(eta) + u};

  if (!opts.want_gradients) return res;

  const Mat vhat = res.posterior.cov;
  Vec rho(n);  // d log Z / d eta_hat_i at fixed hyperparameters
  for (int i = 0; i < n; ++i)
    rho[i] = 0.5 * vhat(i, i) * lik.third_eta_derivative(y[i], eta[i]);

  Mat ikd = k * winv.asDiagonal();
  ikd.diagonal().array() += 1.0;  // I + K D
  Eigen::PartialPivLU<Mat> mode_lu(ikd);

  const auto dk = gram_gradients(kernel, x);
  const int nh = static_cast<int>(dk.size());
  res.grad = Vec::Zero(nh + 1);
  for (int j = 0; j < nh; ++j) {
    const double explicit_part =
        0.5 * alpha.dot(dk[j] * alpha) - 0.5 * solver.trace_solve(dk[j]);
    const Vec deta = mode_lu.solve(dk[j] * alpha);
    res.grad[j] = explicit_part + rho.dot(deta);
  }

  if (lik.has_free_dispersion()) {
    const double phi = lik.dispersion();
    double explicit_part = 0.0;
    Vec du_dphi(n);
    for (int i = 0; i < n; ++i) {
      explicit_part += lik.dloglik_dphi(y[i], eta[i]) -
                       0.5 * vhat(i, i) * lik.dwinv_dphi(y[i], eta[i]);
      du_dphi[i] = lik.du_dphi(y[i], eta[i]);
    }
    const Vec deta = vhat * du_dphi;
    res.grad[nh] = (explicit_part + rho.dot(deta)) * phi;
  }
  return res;
}

}  // namespace ggpm
