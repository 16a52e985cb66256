#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "ggpm/common.hpp"

namespace ggpm {

// ---------------------------------------------------------------------------
// Scalar helpers
// ---------------------------------------------------------------------------

inline double softplus(double x) {
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log pdf / log cdf of the standard normal, stable in both tails.
double norm_logpdf(double x);
double norm_logcdf(double x);
// phi(x)/Phi(x); asymptotically -x for x -> -inf.
double norm_hazard(double x);

// psi_k for k in {0,1,2}. DomainError for x <= 0.
double polygamma(int k, double x);
// Solves psi_0(x) = z for x > 0 to ~1e-12.
double inverse_digamma(double z);

// ---------------------------------------------------------------------------
// Gaussian expectations
// ---------------------------------------------------------------------------

// Nodes/weights such that E[f(Z)] with Z ~ N(0,1) is approximated by
// sum_i w_i f(x_i). Exact for polynomials of degree <= 2*order-1.
struct QuadNodes {
  Vec x;
  Vec w;
};
const QuadNodes& gauss_hermite(int order);

struct GaussianExpectationPlan {
  int order = 61;
  bool adaptive = false;
  double tol = 1e-9;       // relative tolerance for the adaptive scheme
  int max_order = 2049;    // adaptive refinement cap
};

// integral of N(eta|m,v) f(eta) d eta
double gaussian_expect(const std::function<double(double)>& f, double m, double v,
                       const GaussianExpectationPlan& plan = {});

// Joint adaptive evaluation of several integrands sharing the same Gaussian;
// refines until every component is stable.
Vec gaussian_expect_multi(const std::function<void(double, double*)>& f, int n_out,
                          double m, double v, const GaussianExpectationPlan& plan = {});

struct CountSumPolicy {
  int min_terms = 1000;
  double sd_mult = 40.0;
  double rel_tail = 1e-12;
  int hard_cap = 2000000;
};

// sum_{n>=0} f(n) * weight(n), suitable for summable count weights.
// log_weight returns log weight(n) (-inf allowed).
double discrete_expect(const std::function<double(double)>& f,
                       const std::function<double(double)>& log_weight,
                       double mode_hint, double sd_hint,
                       const CountSumPolicy& policy = {});

// ---------------------------------------------------------------------------
// PSD linear algebra
// ---------------------------------------------------------------------------

struct PsdFactor {
  Mat chol_lower;
  double logdet = 0.0;
  double jitter_applied = 0.0;

  Vec solve(const Vec& b) const;
  Mat solve(const Mat& b) const;
};

struct JitterPolicy {
  double initial = 0.0;       // absolute jitter added before the first attempt
  double max_relative = 1e-2; // escalation cap, relative to mean diagonal
};

PsdFactor psd_factor(const Mat& a, const JitterPolicy& policy = {});
Vec psd_solve(const Mat& a, const Vec& b);
Mat psd_solve(const Mat& a, const Mat& b);
double psd_logdet(const Mat& a);

// ---------------------------------------------------------------------------
// Minimizer (Polak-Ribiere+ conjugate gradient with Armijo line search)
// ---------------------------------------------------------------------------

enum class MinimizeStatus { Converged, MaxIterations, LineSearchFailure };

struct MinimizeOpts {
  int max_iter = 200;
  double gtol = 1e-6;         // inf-norm of the gradient
  double initial_step = 1.0;
  int max_line_evals = 40;
  bool treat_errors_as_inf = true;  // ggpm::Error in a trial eval backtracks instead of aborting
};

struct MinimizeResult {
  Vec x;
  double f = 0.0;
  Vec grad;
  MinimizeStatus status = MinimizeStatus::MaxIterations;
  int iterations = 0;
  int n_evals = 0;
  std::vector<double> trace;  // accepted objective values, non-increasing
};

using Objective = std::function<double(const Vec&, Vec* grad)>;

MinimizeResult minimize(const Objective& objective, const Vec& x0,
                        const MinimizeOpts& opts = {});

// ---------------------------------------------------------------------------
// Finite-difference gradient checker (diagnostic)
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  Vec rel_errors;
  Vec analytic;
  Vec numeric;
};

GradCheckResult check_gradient(const Objective& objective, const Vec& x,
                               double step = 1e-5);

inline double logsumexp2(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace ggpm
