#include <Eigen/LU>

#include "ggpm/inference.hpp"

namespace ggpm {

CommonSolver::CommonSolver(const Mat& k, const Vec& site_prec) : k_(&k), s_(site_prec) {
  const int n = static_cast<int>(k.rows());
  if (site_prec.size() != n) throw DimensionError("CommonSolver: size mismatch");
  chol_ = (s_.array() >= 0.0).all();
  if (chol_) {
    rt_ = s_.array().sqrt();
    Mat b = rt_.asDiagonal() * k * rt_.asDiagonal();
    b.diagonal().array() += 1.0;
    b_factor_ = psd_factor(b);
    logdet_ = b_factor_.logdet;
  } else {
    Mat m = s_.asDiagonal() * k;
    m.diagonal().array() += 1.0;
    lu_.compute(m);
    logdet_ = lu_.matrixLU().diagonal().array().abs().log().sum();
  }
}

Vec CommonSolver::alpha(const Vec& nu) const {
  if (chol_) {
    // (K+W)^{-1} t = S^{1/2} B^{-1} S^{-1/2} nu, with 0/0 -> 0 on vacuous sites
    Vec v(nu.size());
    for (int i = 0; i < nu.size(); ++i) v[i] = rt_[i] > 0.0 ? nu[i] / rt_[i] : 0.0;
    return rt_.asDiagonal() * b_factor_.solve(v);
  }
  return lu_.solve(nu);
}

Vec CommonSolver::solve_kw(const Vec& b) const {
  if (chol_) {
    Vec v = rt_.asDiagonal() * b;
    return rt_.asDiagonal() * b_factor_.solve(v);
  }
  return lu_.solve(s_.asDiagonal() * b);
}

Mat CommonSolver::posterior_cov() const {
  const Mat& k = *k_;
  if (chol_) {
    Mat rk = rt_.asDiagonal() * k;
    Mat v = k - rk.transpose() * b_factor_.solve(rk);
    return 0.5 * (v + v.transpose());
  }
  Mat ks = k * s_.asDiagonal();
  ks.diagonal().array() += 1.0;
  Eigen::PartialPivLU<Mat> lu2(ks);
  Mat v = lu2.solve(k);
  return 0.5 * (v + v.transpose());
}

double CommonSolver::trace_solve(const Mat& c) const {
  if (chol_) {
    Mat rc = rt_.asDiagonal() * c * rt_.asDiagonal();
    return b_factor_.solve(rc).trace();
  }
  return lu_.solve(s_.asDiagonal() * c).trace();
}

EngineId engine_from_string(const std::string& s) {
  if (s == "taylor") return EngineId::Taylor;
  if (s == "laplace") return EngineId::Laplace;
  if (s == "ep") return EngineId::Ep;
  if (s == "kld") return EngineId::Kld;
  throw DomainError("unknown inference engine '" + s + "'");
}

std::string engine_to_string(EngineId id) {
  switch (id) {
    case EngineId::Taylor: return "taylor";
    case EngineId::Laplace: return "laplace";
    case EngineId::Ep: return "ep";
    case EngineId::Kld: return "kld";
  }
  return "";
}

InferenceResult infer(EngineId engine, const Likelihood& lik, const KernelSpec& kernel,
                      const Mat& x, const Vec& y, const InferOpts& opts) {
  switch (engine) {
    case EngineId::Taylor: return taylor_infer(lik, kernel, x, y, opts);
    case EngineId::Laplace: return laplace_infer(lik, kernel, x, y, opts);
    case EngineId::Ep: return ep_infer(lik, kernel, x, y, opts);
    case EngineId::Kld: return kld_infer(lik, kernel, x, y, opts);
  }
  throw Error("unreachable engine id");
}

TiltedMoments tilted_moments(const Likelihood& lik, double y, double cavity_mean,
                             double cavity_var, const GaussianExpectationPlan& plan) {
  if (!(cavity_var > 0.0)) throw DomainError("tilted_moments: cavity variance must be > 0");
  const double sd = std::sqrt(cavity_var);

  auto eval = [&](int order) -> TiltedMoments {
    const QuadNodes& q = gauss_hermite(order);
    const int n = order;
    Vec a(n), eta(n);
    double amax = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      eta[i] = cavity_mean + sd * q.x[i];
      const double ll = lik.log_likelihood_raw(y, eta[i]);
      a[i] = std::log(q.w[i]) + ll;
      amax = std::max(amax, a[i]);
    }
    if (!std::isfinite(amax))
      throw ConvergenceError("tilted_moments: likelihood vanished at all nodes");
    double z = 0.0, m1 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = std::exp(a[i] - amax);
      z += w;
      m1 += w * eta[i];
    }
    m1 /= z;
    double m2 = 0.0;
    for (int i = 0; i < n; ++i) m2 += std::exp(a[i] - amax) * (eta[i] - m1) * (eta[i] - m1);
    m2 /= z;
    return {amax + std::log(z), m1, m2};
  };

  if (!plan.adaptive) return eval(plan.order);
  int order = plan.order;
  TiltedMoments prev = eval(order);
  while (true) {
    const int next = 2 * order + 1;
    if (next > plan.max_order)
      throw ConvergenceError("tilted_moments: adaptive refinement stalled");
    const TiltedMoments cur = eval(next);
    const double dz = std::abs(cur.log_z - prev.log_z);
    const double dm = std::abs(cur.mean - prev.mean) / std::max(1.0, std::abs(cur.mean));
    const double dv = std::abs(cur.var - prev.var) / std::max(cur.var, 1e-12);
    if (dz < plan.tol && dm < plan.tol && dv < plan.tol) return cur;
    prev = cur;
    order = next;
  }
}

ExpectedLogLik expected_log_lik(const Likelihood& lik, double y, double m, double v,
                                const GaussianExpectationPlan& plan) {
  if (!(v > 0.0)) throw DomainError("expected_log_lik: variance must be positive");
  const double phi = lik.dispersion();

  if (lik.id() == "gaussian") {
    const double r = y - m;
    return {-0.5 * std::log(2.0 * M_PI * phi) - (r * r + v) / (2.0 * phi),
            r / phi, -0.5 / phi, (r * r + v) / (2.0 * phi * phi) - 0.5 / phi};
  }
  if (lik.id() == "poisson") {
    const double ez = std::exp(m + 0.5 * v);
    return {y * m - ez - std::lgamma(y + 1.0), y - ez, -0.5 * ez, 0.0};
  }

  const bool want_phi = lik.has_free_dispersion();
  const double sd = std::sqrt(v);
  // Pair the symmetric nodes so the dv term E[x u]/(2 sd) is a difference of
  // scores, not a cancellation of large near-equal sums.
  auto eval = [&](int order) -> ExpectedLogLik {
    const QuadNodes& q = gauss_hermite(order);
    ExpectedLogLik acc{0.0, 0.0, 0.0, 0.0};
    const int half = order / 2;
    if (order % 2 == 1) {
      const double w = q.w[half];
      acc.f += w * lik.log_likelihood_raw(y, m);
      acc.dm += w * lik.derivative_functions(y, m).u;
      if (want_phi) acc.dphi += w * lik.dloglik_dphi(y, m);
    }
    for (int i = half + (order % 2); i < order; ++i) {
      const double xx = q.x[i], w = q.w[i];
      const double ep = m + sd * xx, em = m - sd * xx;
      acc.f += w * (lik.log_likelihood_raw(y, ep) + lik.log_likelihood_raw(y, em));
      const double up = lik.derivative_functions(y, ep).u;
      const double um = lik.derivative_functions(y, em).u;
      acc.dm += w * (up + um);
      acc.dv += w * xx * (up - um);
      if (want_phi) acc.dphi += w * (lik.dloglik_dphi(y, ep) + lik.dloglik_dphi(y, em));
    }
    acc.dv /= 2.0 * sd;
    return acc;
  };

  if (!plan.adaptive) return eval(plan.order);
  int order = plan.order;
  ExpectedLogLik prev = eval(order);
  while (true) {
    const int next = 2 * order + 1;
    if (next > plan.max_order)
      throw ConvergenceError("expected_log_lik: adaptive refinement stalled");
    const ExpectedLogLik cur = eval(next);
    const double floor = 1e-9 * std::max(1.0, std::abs(cur.f));
    auto ok = [&](double a, double b) {
      return std::abs(a - b) <= plan.tol * std::max({std::abs(a), std::abs(b), floor});
    };
    if (ok(prev.f, cur.f) && ok(prev.dm, cur.dm) && ok(prev.dv, cur.dv) &&
        ok(prev.dphi, cur.dphi))
      return cur;
    prev = cur;
    order = next;
  }
}

ExpectedLogLik expected_log_lik_direct(const Likelihood& lik, double y, double m, double v,
                                       const GaussianExpectationPlan& plan) {
  if (!(v > 0.0)) throw DomainError("expected_log_lik_direct: variance must be positive");
  const bool want_phi = lik.has_free_dispersion();
  const int n_out = want_phi ? 4 : 3;
  Vec acc = gaussian_expect_multi(
      [&](double eta, double* out) {
        const double ll = lik.log_likelihood_raw(y, eta);
        const double d = eta - m;
        out[0] = ll;
        out[1] = d / v * ll;
        out[2] = (d * d - v) / (2.0 * v * v) * ll;
        if (want_phi) out[3] = lik.dloglik_dphi(y, eta);
      },
      n_out, m, v, plan);
  return {acc[0], acc[1], acc[2], want_phi ? acc[3] : 0.0};
}

std::pair<double, double> latent_predict(const InferenceResult& result,
                                         const KernelSpec& kernel, const Mat& x,
                                         const Vec& xstar) {
  if (xstar.size() != x.cols()) throw DimensionError("latent_predict: input dimension mismatch");
  Mat xs(1, xstar.size());
  xs.row(0) = xstar;
  const Vec kstar = gram(kernel, x, xs).col(0);
  const double kss = kernel_value(kernel, xstar, xstar);

  const Mat k = gram(kernel, x);
  if (result.posterior.common) {
    const CommonForm& cf = *result.posterior.common;
    CommonSolver solver(k, cf.site_prec);
    const double mu = kstar.dot(solver.alpha(cf.nu));
    const double var = kss - kstar.dot(solver.solve_kw(kstar));
    return {mu, std::max(var, 1e-300)};
  }
  // (m, V) route: mu = k*' K^{-1} m, var = kss - k*'(K^{-1} - K^{-1} V K^{-1})k*
  const PsdFactor kf = psd_factor(k);
  const Vec kik = kf.solve(kstar);
  const double mu = kik.dot(result.posterior.mean);
  const double var = kss - kstar.dot(kik) + kik.dot(result.posterior.cov * kik);
  return {mu, std::max(var, 1e-300)};
}

}  // namespace ggpm
