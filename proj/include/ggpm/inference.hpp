#pragma once

#include <Eigen/LU>
#include <optional>
#include <string>

#include "ggpm/kernels.hpp"
#include "ggpm/likelihoods.hpp"
#include "ggpm/numerics.hpp"

namespace ggpm {

// Common (W, t) form shared by Taylor, Laplace and EP posteriors, stored in
// natural parameters so vacuous sites (infinite W) stay representable:
//   site_prec = 1/w_i   (>= 0)
//   nu        = t_i / w_i
struct CommonForm {
  Vec site_prec;
  Vec nu;

  Vec w() const { return site_prec.cwiseInverse(); }
  Vec t() const { return nu.cwiseQuotient(site_prec); }
};

struct GaussianPosterior {
  Vec mean;
  Mat cov;
  std::optional<CommonForm> common;
};

// Factorization of the effective-noise system (K + W)^{-1} used throughout;
// Cholesky of I + W^{-1/2} K W^{-1/2} when all precisions are nonnegative,
// LU of (SK + I) otherwise (non-concave Laplace modes).
class CommonSolver {
 public:
  CommonSolver(const Mat& k, const Vec& site_prec);

  // alpha = (K + W)^{-1} t given nu = t / w
  Vec alpha(const Vec& nu) const;
  // (K + W)^{-1} b for a plain right-hand side
  Vec solve_kw(const Vec& b) const;
  double logdet_i_plus_sk() const { return logdet_; }
  // posterior covariance (K^{-1} + S)^{-1}
  Mat posterior_cov() const;
  // trace((K + W)^{-1} C)
  double trace_solve(const Mat& c) const;
  const Mat& k() const { return *k_; }
  bool chol_path() const { return chol_; }

 private:
  const Mat* k_;
  Vec s_;
  Vec rt_;
  bool chol_;
  PsdFactor b_factor_;
  Eigen::PartialPivLU<Mat> lu_;  // of (SK + I)
  double logdet_ = 0.0;
};

struct EpOpts {
  double tol = 1e-6;
  int max_sweeps = 60;
  double damping = 0.9;  // fraction of the new natural parameters accepted
  std::optional<std::pair<Vec, Vec>> init_sites;  // (tau_tilde, nu_tilde)
};

struct NewtonOpts {
  double tol = 1e-8;  // inf-norm of the posterior score at the mode
  int max_iter = 100;
};

struct KldOpts {
  double gtol = 1e-7;
  int max_iter = 1000;
};

enum class TaylorExpansion { Canonical, Agnostic, Explicit };

struct InferOpts {
  TaylorExpansion expansion = TaylorExpansion::Canonical;
  Vec explicit_expansion;
  NewtonOpts newton;
  EpOpts ep;
  KldOpts kld;
  GaussianExpectationPlan quad{61, true, 1e-10, 2049};
  bool want_gradients = true;
};

struct Diagnostics {
  std::string method;
  int iterations = 0;
  bool converged = true;
  int skipped_site_updates = 0;
  bool nonconcave = false;
};

struct InferenceResult {
  GaussianPosterior posterior;
  double log_marginal = 0.0;
  // d log_marginal / d (log kernel hyperparams..., log dispersion);
  // the dispersion slot is zero for fixed-dispersion likelihoods.
  Vec grad;
  Diagnostics diagnostics;
  // engine extras
  Vec ep_site_prec, ep_site_nu;       // converged EP sites
  Vec kld_gamma, kld_lambda;          // converged variational parameters
};

InferenceResult taylor_infer(const Likelihood& lik, const KernelSpec& kernel,
                             const Mat& x, const Vec& y, const InferOpts& opts = {});
InferenceResult laplace_infer(const Likelihood& lik, const KernelSpec& kernel,
                              const Mat& x, const Vec& y, const InferOpts& opts = {});
InferenceResult ep_infer(const Likelihood& lik, const KernelSpec& kernel,
                         const Mat& x, const Vec& y, const InferOpts& opts = {});
InferenceResult kld_infer(const Likelihood& lik, const KernelSpec& kernel,
                          const Mat& x, const Vec& y, const InferOpts& opts = {});

enum class EngineId { Taylor, Laplace, Ep, Kld };
EngineId engine_from_string(const std::string& s);
std::string engine_to_string(EngineId id);

InferenceResult infer(EngineId engine, const Likelihood& lik, const KernelSpec& kernel,
                      const Mat& x, const Vec& y, const InferOpts& opts = {});

// Zeroth/first/second moments of p(y|theta(eta)) N(eta | mu, sigma2).
struct TiltedMoments {
  double log_z;
  double mean;
  double var;
};
TiltedMoments tilted_moments(const Likelihood& lik, double y, double cavity_mean,
                             double cavity_var,
                             const GaussianExpectationPlan& plan = {61, true, 1e-10, 2049});

// Gaussian expectation of the log-likelihood and its derivatives:
// f, df/dm, df/dv, df/dphi. Closed forms for the Gaussian and canonical
// Poisson, quadrature elsewhere (the u-expression forms).
struct ExpectedLogLik {
  double f;
  double dm;
  double dv;
  double dphi;
};
ExpectedLogLik expected_log_lik(const Likelihood& lik, double y, double m, double v,
                                const GaussianExpectationPlan& plan = {61, true, 1e-10, 2049});
// Same quantities via the direct density-derivative identities; used as a
// cross-check of the u-forms.
ExpectedLogLik expected_log_lik_direct(const Likelihood& lik, double y, double m, double v,
                                       const GaussianExpectationPlan& plan = {61, true, 1e-10,
                                                                              2049});

// Latent predictive moments at a test input.
std::pair<double, double> latent_predict(const InferenceResult& result,
                                         const KernelSpec& kernel, const Mat& x,
                                         const Vec& xstar);

}  // namespace ggpm
