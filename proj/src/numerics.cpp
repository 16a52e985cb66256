#include "ggpm/numerics.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <map>
#include <mutex>

namespace ggpm {

// ---------------------------------------------------------------------------
// Standard normal tails
// ---------------------------------------------------------------------------

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kSqrt2 = 1.4142135623730950488;
}  // namespace

double norm_logpdf(double x) { return -0.5 * x * x - 0.5 * kLog2Pi; }

double norm_logcdf(double x) {
  if (x > -10.0) return std::log(0.5 * std::erfc(-x / kSqrt2));
  // Asymptotic expansion of Mills' ratio in the lower tail.
  const double x2 = x * x;
  const double corr = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2) +
                      105.0 / (x2 * x2 * x2 * x2);
  return norm_logpdf(x) - std::log(-x) + std::log(corr);
}

double norm_hazard(double x) { return std::exp(norm_logpdf(x) - norm_logcdf(x)); }

// ---------------------------------------------------------------------------
// Polygamma
// ---------------------------------------------------------------------------

double polygamma(int k, double x) {
  if (!(x > 0.0)) throw DomainError("polygamma: requires x > 0");
  if (k < 0 || k > 2) throw DomainError("polygamma: order must be 0, 1 or 2");
  // Shift into the asymptotic regime, then apply the Bernoulli-number series.
  double acc = 0.0;
  while (x < 12.0) {
    if (k == 0) acc -= 1.0 / x;
    else if (k == 1) acc += 1.0 / (x * x);
    else acc -= 2.0 / (x * x * x);
    x += 1.0;
  }
  const double ix = 1.0 / x;
  const double u = ix * ix;
  double s;
  if (k == 0) {
    s = std::log(x) - 0.5 * ix -
        u * (1.0 / 12.0 -
             u * (1.0 / 120.0 - u * (1.0 / 252.0 - u * (1.0 / 240.0 - u / 132.0))));
  } else if (k == 1) {
    s = ix + 0.5 * u +
        ix * u *
            (1.0 / 6.0 -
             u * (1.0 / 30.0 - u * (1.0 / 42.0 - u * (1.0 / 30.0 - u * 5.0 / 66.0))));
  } else {
    s = -u - ix * u -
        u * u * (0.5 - u * (1.0 / 6.0 - u * (1.0 / 6.0 - u * 3.0 / 10.0)));
  }
  return acc + s;
}

double inverse_digamma(double z) {
  // Initialization from Minka's fixed-point notes, then Newton.
  double x = (z >= -2.22) ? std::exp(z) + 0.5 : -1.0 / (z + 0.5772156649015329);
  for (int it = 0; it < 50; ++it) {
    const double f = polygamma(0, x) - z;
    if (std::abs(f) < 1e-13) break;
    double step = f / polygamma(1, x);
    if (step >= x) step = 0.5 * x;  // keep the iterate positive
    x -= step;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Gauss-Hermite nodes (probabilists' convention, N(0,1) weight)
// ---------------------------------------------------------------------------

const QuadNodes& gauss_hermite(int order) {
  if (order < 1) throw DomainError("gauss_hermite: order must be >= 1");
  static std::map<int, QuadNodes> cache;
  static std::mutex mtx;
  std::lock_guard<std::mutex> lock(mtx);
  auto it = cache.find(order);
  if (it != cache.end()) return it->second;

  Mat jacobi = Mat::Zero(order, order);
  for (int i = 1; i < order; ++i) {
    const double beta = std::sqrt(static_cast<double>(i));
    jacobi(i, i - 1) = beta;
    jacobi(i - 1, i) = beta;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(jacobi);
  QuadNodes nodes;
  nodes.x = es.eigenvalues();
  nodes.w = es.eigenvectors().row(0).transpose().array().square();
  nodes.w /= nodes.w.sum();
  return cache.emplace(order, std::move(nodes)).first->second;
}

double gaussian_expect(const std::function<double(double)>& f, double m, double v,
                       const GaussianExpectationPlan& plan) {
  if (!(v > 0.0)) throw DomainError("gaussian_expect: variance must be positive");
  const double sd = std::sqrt(v);
  auto eval = [&](int order) {
    const QuadNodes& q = gauss_hermite(order);
    double acc = 0.0;
    for (int i = 0; i < order; ++i) {
      const double fx = f(m + sd * q.x[i]);
      if (std::isnan(fx)) throw NonFiniteError("gaussian_expect: integrand returned NaN");
      acc += q.w[i] * fx;
    }
    return acc;
  };
  if (!plan.adaptive) return eval(plan.order);
  int order = plan.order;
  double prev = eval(order);
  while (true) {
    const int next = 2 * order + 1;
    if (next > plan.max_order)
      throw ConvergenceError("gaussian_expect: adaptive refinement stalled");
    const double cur = eval(next);
    const double scale = std::max({std::abs(prev), std::abs(cur), 1e-12});
    if (std::abs(cur - prev) <= plan.tol * scale) return cur;
    prev = cur;
    order = next;
  }
}

Vec gaussian_expect_multi(const std::function<void(double, double*)>& f, int n_out,
                          double m, double v, const GaussianExpectationPlan& plan) {
  if (!(v > 0.0)) throw DomainError("gaussian_expect_multi: variance must be positive");
  const double sd = std::sqrt(v);
  std::vector<double> buf(n_out);
  auto eval = [&](int order) {
    const QuadNodes& q = gauss_hermite(order);
    Vec acc = Vec::Zero(n_out);
    for (int i = 0; i < order; ++i) {
      f(m + sd * q.x[i], buf.data());
      for (int j = 0; j < n_out; ++j) acc[j] += q.w[i] * buf[j];
    }
    return acc;
  };
  if (!plan.adaptive) return eval(plan.order);
  int order = plan.order;
  Vec prev = eval(order);
  while (true) {
    const int next = 2 * order + 1;
    if (next > plan.max_order)
      throw ConvergenceError("gaussian_expect_multi: adaptive refinement stalled");
    Vec cur = eval(next);
    bool ok = true;
    for (int j = 0; j < n_out; ++j) {
      const double scale = std::max({std::abs(prev[j]), std::abs(cur[j]), 1e-12});
      if (std::abs(cur[j] - prev[j]) > plan.tol * scale) { ok = false; break; }
    }
    if (ok) return cur;
    prev = cur;
    order = next;
  }
}

double discrete_expect(const std::function<double(double)>& f,
                       const std::function<double(double)>& log_weight,
                       double mode_hint, double sd_hint,
                       const CountSumPolicy& policy) {
  const long cap = std::min<long>(
      policy.hard_cap,
      std::max<long>(policy.min_terms,
                     static_cast<long>(mode_hint + policy.sd_mult * sd_hint) + 50));
  double acc = 0.0;
  double acc_abs = 0.0;
  const long mode = std::max<long>(0, static_cast<long>(mode_hint));
  int small_run = 0;
  for (long n = 0; n <= cap; ++n) {
    const double lw = log_weight(static_cast<double>(n));
    const double w = std::exp(lw);
    const double term = w * f(static_cast<double>(n));
    acc += term;
    acc_abs += std::abs(term) + w;
    if (n > mode) {
      if (std::abs(term) + w <= policy.rel_tail * std::max(acc_abs, 1e-300)) {
        if (++small_run >= 5) return acc;
      } else {
        small_run = 0;
      }
    }
  }
  throw ConvergenceError("discrete_expect: term cap reached before tail bound");
}

// ---------------------------------------------------------------------------
// PSD factorization with jitter escalation
// ---------------------------------------------------------------------------

Vec PsdFactor::solve(const Vec& b) const {
  Vec y = chol_lower.triangularView<Eigen::Lower>().solve(b);
  return chol_lower.transpose().triangularView<Eigen::Upper>().solve(y);
}

Mat PsdFactor::solve(const Mat& b) const {
  Mat y = chol_lower.triangularView<Eigen::Lower>().solve(b);
  return chol_lower.transpose().triangularView<Eigen::Upper>().solve(y);
}

PsdFactor psd_factor(const Mat& a, const JitterPolicy& policy) {
  if (a.rows() != a.cols()) throw DimensionError("psd_factor: matrix must be square");
  const int n = static_cast<int>(a.rows());
  const double scale = std::max(a.diagonal().array().abs().mean(), 1e-300);
  double jitter = policy.initial;
  for (int attempt = 0; attempt < 24; ++attempt) {
    Mat work = a;
    if (jitter > 0.0) work.diagonal().array() += jitter;
    Eigen::LLT<Mat> llt(work);
    if (llt.info() == Eigen::Success) {
      PsdFactor f;
      f.chol_lower = llt.matrixL();
      f.logdet = 2.0 * f.chol_lower.diagonal().array().log().sum();
      f.jitter_applied = jitter;
      return f;
    }
    jitter = (jitter == 0.0) ? 1e-12 * scale : 10.0 * jitter;
    if (jitter > policy.max_relative * scale) break;
  }
  throw NotPsdError("psd_factor: matrix not PSD after jitter escalation (n=" +
                    std::to_string(n) + ")");
}

Vec psd_solve(const Mat& a, const Vec& b) { return psd_factor(a).solve(b); }
Mat psd_solve(const Mat& a, const Mat& b) { return psd_factor(a).solve(b); }
double psd_logdet(const Mat& a) { return psd_factor(a).logdet; }

// ---------------------------------------------------------------------------
// Minimizer
// ---------------------------------------------------------------------------

namespace {

double guarded_eval(const Objective& objective, const Vec& x, Vec* g,
                    const MinimizeOpts& opts, int& n_evals) {
  ++n_evals;
  if (!opts.treat_errors_as_inf) return objective(x, g);
  try {
    const double f = objective(x, g);
    return std::isnan(f) ? std::numeric_limits<double>::infinity() : f;
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace

MinimizeResult minimize(const Objective& objective, const Vec& x0,
                        const MinimizeOpts& opts) {
  MinimizeResult res;
  res.x = x0;
  res.grad.resize(x0.size());
  res.f = objective(x0, &res.grad);  // propagate errors at the start point
  res.n_evals = 1;
  if (!std::isfinite(res.f))
    throw NonFiniteError("minimize: objective not finite at the start point");
  res.trace.push_back(res.f);

  // L-BFGS direction with an Armijo backtracking line search; curvature pairs
  // that fail s'y > 0 are dropped.
  const int mem = 10;
  std::vector<Vec> s_hist, y_hist;
  std::vector<double> rho_hist;
  Vec g = res.grad;
  const double c1 = 1e-4;
  bool fresh_start = true;

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() < opts.gtol) {
      res.status = MinimizeStatus::Converged;
      res.iterations = iter;
      return res;
    }
    // two-loop recursion
    Vec d = -g;
    const int h = static_cast<int>(s_hist.size());
    std::vector<double> a(h);
    for (int i = h - 1; i >= 0; --i) {
      a[i] = rho_hist[i] * s_hist[i].dot(d);
      d -= a[i] * y_hist[i];
    }
    if (h > 0) {
      const double gamma =
          s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      d *= gamma;
    }
    for (int i = 0; i < h; ++i) {
      const double b = rho_hist[i] * y_hist[i].dot(d);
      d += (a[i] - b) * s_hist[i];
    }
    double slope = g.dot(d);
    if (slope >= 0.0) {
      d = -g;
      slope = g.dot(d);
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    double alpha = fresh_start ? std::min(opts.initial_step, 1.0 / std::max(1.0, g.norm()))
                               : 1.0;
    bool accepted = false;
    Vec x_new;
    Vec g_new(x0.size());
    double f_new = 0.0;
    for (int ls = 0; ls < opts.max_line_evals; ++ls) {
      x_new = res.x + alpha * d;
      f_new = guarded_eval(objective, x_new, &g_new, opts, res.n_evals);
      if (std::isfinite(f_new) && f_new <= res.f + c1 * alpha * slope) {
        accepted = true;
        break;
      }
      double alpha_q = alpha;
      if (std::isfinite(f_new)) {
        // minimizer of the quadratic through f(0), f'(0), f(alpha)
        const double denom = 2.0 * (f_new - res.f - slope * alpha);
        if (denom > 0.0) alpha_q = -slope * alpha * alpha / denom;
      }
      alpha = std::clamp(alpha_q, 0.1 * alpha, 0.5 * alpha);
      if (alpha < 1e-18) break;
    }

    if (!accepted) {
      if (!s_hist.empty()) {  // retry from steepest descent before giving up
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        fresh_start = true;
        continue;
      }
      res.status = MinimizeStatus::LineSearchFailure;
      res.iterations = iter;
      return res;
    }

    const Vec s = x_new - res.x;
    const Vec yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(yv);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > mem) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
    }
    res.x = x_new;
    res.f = f_new;
    g = g_new;
    res.grad = g;
    res.trace.push_back(res.f);
    res.iterations = iter + 1;
    fresh_start = false;
  }
  res.status = MinimizeStatus::MaxIterations;
  return res;
}

GradCheckResult check_gradient(const Objective& objective, const Vec& x, double step) {
  const int n = static_cast<int>(x.size());
  GradCheckResult out;
  out.analytic.resize(n);
  out.numeric.resize(n);
  out.rel_errors.resize(n);
  Vec g(n);
  objective(x, &g);
  out.analytic = g;
  const double gscale = std::max(1.0, g.lpNorm<Eigen::Infinity>());
  for (int i = 0; i < n; ++i) {
    const double h = step * std::max(1.0, std::abs(x[i]));
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fp = objective(xp, nullptr);
    const double fm = objective(xm, nullptr);
    out.numeric[i] = (fp - fm) / (2.0 * h);
    const double denom =
        std::max({std::abs(out.numeric[i]), std::abs(g[i]), 1e-4 * gscale});
    out.rel_errors[i] = std::abs(out.numeric[i] - g[i]) / denom;
  }
  out.max_rel_error = out.rel_errors.lpNorm<Eigen::Infinity>();
  return out;
}

}  // namespace ggpm
