#include "ggpm/likelihoods.hpp"

#include <algorithm>
#include <cmath>

namespace ggpm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kInf = std::numeric_limits<double>::infinity();

double lfact(double n) { return std::lgamma(n + 1.0); }

bool near_integer(double y) { return std::abs(y - std::round(y)) < 1e-9; }

}  // namespace

// ---------------------------------------------------------------------------
// Support
// ---------------------------------------------------------------------------

bool Support::contains(double y) const {
  if (!std::isfinite(y)) return false;
  switch (kind) {
    case SupportKind::Reals:
      return true;
    case SupportKind::PositiveReals:
      return y > 0.0;
    case SupportKind::UnitInterval:
      return y > 0.0 && y < 1.0;
    case SupportKind::Counts:
      return y >= 0.0 && near_integer(y);
    case SupportKind::Fractions: {
      const double k = y * n_trials;
      return k > -1e-9 && k < n_trials + 1e-9 && near_integer(k);
    }
  }
  return false;
}

std::string Support::describe() const {
  switch (kind) {
    case SupportKind::Reals: return "real numbers";
    case SupportKind::PositiveReals: return "positive reals";
    case SupportKind::UnitInterval: return "open unit interval (0,1)";
    case SupportKind::Counts: return "counts 0,1,2,...";
    case SupportKind::Fractions:
      return "fractions k/" + std::to_string(n_trials) + ", k=0.." + std::to_string(n_trials);
  }
  return "";
}

// ---------------------------------------------------------------------------
// COM-Poisson partition series
// ---------------------------------------------------------------------------

namespace {

const std::vector<double>& lfact_table() {
  static const std::vector<double> table = [] {
    std::vector<double> t(200001);
    t[0] = 0.0;
    for (size_t n = 1; n < t.size(); ++n) t[n] = t[n - 1] + std::log(static_cast<double>(n));
    return t;
  }();
  return table;
}

inline double lfact_fast(long n) {
  const auto& t = lfact_table();
  return n < static_cast<long>(t.size()) ? t[n] : std::lgamma(n + 1.0);
}

struct ComSeries {
  double log_s;
  long n_max;
};

// One streaming pass over the log-space series, stopping on a geometric tail
// bound once past the mode.
ComSeries com_series(double log_mu, double nu, double rel_tail = 1e-12) {
  const double mode = std::exp(std::min(log_mu, 14.0));
  const long cap = std::max<long>(
      1000, static_cast<long>(mode + 40.0 * std::sqrt(mode / nu + 1.0)) + 50);
  double log_acc = -kInf;
  double prev_term = -kInf;
  for (long n = 0; n <= cap; ++n) {
    const double term = nu * (n * log_mu - lfact_fast(n));
    log_acc = logsumexp2(log_acc, term);
    if (n > static_cast<long>(mode) && term < prev_term) {
      const double ratio = std::exp(term - prev_term);
      if (ratio < 1.0) {
        const double log_tail = term + std::log(ratio / (1.0 - ratio));
        if (log_tail < log_acc + std::log(rel_tail)) return {log_acc, n};
      }
    }
    prev_term = term;
  }
  throw ConvergenceError("com_poisson_log_partition: series tail bound not met");
}

}  // namespace

double com_poisson_log_partition(double mu, double nu) {
  if (!(mu > 0.0) || !(nu > 0.0))
    throw DomainError("com_poisson_log_partition: mu and nu must be positive");
  if (std::log(mu) > 9.0) {
    // Asymptotic expansion (Shmueli et al.): used far outside the series range.
    return nu * mu - 0.5 * (nu - 1.0) * std::log(2.0 * M_PI * mu) - 0.5 * std::log(nu);
  }
  return com_series(std::log(mu), nu).log_s;
}

ComPoissonMoments com_poisson_moments(double log_mu, double nu) {
  ComPoissonMoments m;
  if (log_mu > 9.0) {
    const double mu = std::exp(log_mu);
    m.log_s = nu * mu - 0.5 * (nu - 1.0) * std::log(2.0 * M_PI * mu) - 0.5 * std::log(nu);
    m.mean = mu + 1.0 / (2.0 * nu) - 0.5;
    m.var = mu / nu;
    m.third_central = mu / (nu * nu);
    m.e_logfact = m.mean * log_mu - (m.mean - 0.0);  // Stirling-level proxy, tail only
    m.cov_n_logfact = m.var * log_mu;
    m.cov_n2_logfact = 2.0 * m.mean * m.var * log_mu;
    return m;
  }
  const ComSeries s = com_series(log_mu, nu);
  m.log_s = s.log_s;
  double e1 = 0, e2 = 0, e3 = 0, el = 0, enl = 0, en2l = 0;
  for (long n = 0; n <= s.n_max; ++n) {
    const double lf = lfact_fast(n);
    const double p = std::exp(nu * (n * log_mu - lf) - s.log_s);
    const double nd = static_cast<double>(n);
    e1 += p * nd;
    e2 += p * nd * nd;
    e3 += p * nd * nd * nd;
    el += p * lf;
    enl += p * nd * lf;
    en2l += p * nd * nd * lf;
  }
  m.mean = e1;
  m.var = std::max(e2 - e1 * e1, 1e-300);
  m.third_central = e3 - 3.0 * e2 * e1 + 2.0 * e1 * e1 * e1;
  m.e_logfact = el;
  m.cov_n_logfact = enl - e1 * el;
  m.cov_n2_logfact = en2l - e2 * el;
  return m;
}

// ---------------------------------------------------------------------------
// Likelihood
// ---------------------------------------------------------------------------

Likelihood::Likelihood(std::string id, DistributionSpec dist, LinkMap link,
                       double dispersion, bool free_dispersion, int n_trials,
                       double count_offset)
    : id_(std::move(id)),
      dist_(std::move(dist)),
      link_(std::move(link)),
      phi_(dispersion),
      free_dispersion_(free_dispersion),
      n_trials_(n_trials),
      offset_(count_offset) {
  if (!(phi_ > 0.0)) throw DomainError("likelihood dispersion must be positive");
}

Likelihood Likelihood::with_dispersion(double phi) const {
  if (!free_dispersion_)
    throw DomainError("likelihood '" + id_ + "' has fixed dispersion");
  return make_likelihood(id_, phi, n_trials_, offset_);
}

Likelihood Likelihood::with_count_offset(double c) const {
  return make_likelihood(id_, phi_, n_trials_, c);
}

void Likelihood::validate(double y) const {
  if (!support().contains(y))
    throw DomainError("output " + std::to_string(y) + " outside " + id_ +
                      " support (" + support().describe() + ")");
}

double Likelihood::ll_impl(double y, double eta) const {
  if (ll_override_) return ll_override_(*this, y, eta);
  const double th = link_.theta(eta);
  const double a = dist_.a(phi_);
  return (dist_.T(y) * th - dist_.b(th, phi_)) / a + dist_.c(phi_, y);
}

double Likelihood::log_likelihood(double y, double eta) const {
  validate(y);
  if (!std::isfinite(eta)) throw DomainError("latent value must be finite");
  const double ll = ll_impl(y, eta);
  if (std::isnan(ll) || ll == kInf)
    throw OverflowError("log-likelihood not finite for " + id_ + " at eta=" +
                        std::to_string(eta));
  if (ll == -kInf)
    throw OverflowError("log-likelihood underflow for " + id_ + " at eta=" +
                        std::to_string(eta));
  return ll;
}

double Likelihood::log_likelihood_raw(double y, double eta) const {
  const double ll = ll_impl(y, eta);
  return std::isnan(ll) ? -kInf : ll;
}

DerivativePair Likelihood::derivative_functions(double y, double eta) const {
  const double th = link_.theta(eta);
  const double a = dist_.a(phi_);
  const double resid = dist_.T(y) - dist_.db(th, phi_);
  const double d1 = link_.dtheta(eta);
  const double curv = dist_.d2b(th, phi_) * d1 * d1 - resid * link_.d2theta(eta);
  if (curv == 0.0)
    throw SingularCurvatureError("zero curvature for " + id_ + " at eta=" +
                                 std::to_string(eta));
  return {d1 * resid / a, curv / a};
}

double Likelihood::third_eta_derivative(double y, double eta) const {
  const double th = link_.theta(eta);
  const double resid = dist_.T(y) - dist_.db(th, phi_);
  const double d1 = link_.dtheta(eta), d2 = link_.d2theta(eta), d3 = link_.d3theta(eta);
  const double dcurv = dist_.d3b(th, phi_) * d1 * d1 * d1 +
                       3.0 * dist_.d2b(th, phi_) * d1 * d2 - resid * d3;
  return -dcurv / dist_.a(phi_);
}

double Likelihood::dloglik_dphi(double y, double eta) const {
  if (!free_dispersion_) return 0.0;
  const double th = link_.theta(eta);
  const double a = dist_.a(phi_), da = dist_.da(phi_);
  const double v = (dist_.T(y) * th - dist_.b(th, phi_)) / a;
  double out = -(da / a) * v + dist_.dc(phi_, y);
  if (dist_.partition_depends_on_phi) out -= dist_.b_dphi(th, phi_) / a;
  return out;
}

double Likelihood::du_dphi(double y, double eta) const {
  if (!free_dispersion_) return 0.0;
  const double th = link_.theta(eta);
  const double a = dist_.a(phi_), da = dist_.da(phi_);
  const double d1 = link_.dtheta(eta);
  const double u = d1 * (dist_.T(y) - dist_.db(th, phi_)) / a;
  double out = -(da / a) * u;
  if (dist_.partition_depends_on_phi) out -= d1 * dist_.db_dphi(th, phi_) / a;
  return out;
}

double Likelihood::dwinv_dphi(double y, double eta) const {
  if (!free_dispersion_) return 0.0;
  const double th = link_.theta(eta);
  const double a = dist_.a(phi_), da = dist_.da(phi_);
  const double resid = dist_.T(y) - dist_.db(th, phi_);
  const double d1 = link_.dtheta(eta), d2 = link_.d2theta(eta);
  const double curv = dist_.d2b(th, phi_) * d1 * d1 - resid * d2;
  double out = -(da / (a * a)) * curv;
  if (dist_.partition_depends_on_phi)
    out += (d1 * d1 * dist_.d2b_dphi(th, phi_) + d2 * dist_.db_dphi(th, phi_)) / a;
  return out;
}

double Likelihood::canonical_expansion_point(double y) const {
  if (support().kind == SupportKind::UnitInterval && (y == 0.0 || y == 1.0))
    throw UndefinedPointError("expansion point undefined at unit-interval boundary");
  validate(y);
  if (agnostic_expansion_) return 0.0;
  double yy = y;
  if (support().is_count_like()) yy += offset_;
  if (support().kind == SupportKind::Counts && yy <= 0.0)
    throw UndefinedPointError("expansion point undefined at count 0 without offset");
  const double m = dist_.T(yy);
  const double eta = link_.g(m, phi_);
  if (!std::isfinite(eta))
    throw UndefinedPointError("expansion point not finite for " + id_ + " at y=" +
                              std::to_string(y));
  return eta;
}

double Likelihood::expansion_point_dphi(double y) const {
  if (!free_dispersion_ || agnostic_expansion_) return 0.0;
  if (expansion_dphi_) return expansion_dphi_(*this, y);
  return 0.0;
}

std::pair<double, double> Likelihood::mean_and_variance(double eta) const {
  const double th = link_.theta(eta);
  const double mean = dist_.db(th, phi_);
  const double var = dist_.d2b(th, phi_) * dist_.a(phi_);
  if (!(var > 0.0))
    throw DomainError("non-positive variance for " + id_ + " at eta=" + std::to_string(eta));
  return {mean, var};
}

double Likelihood::output_mean(double eta) const {
  if (mean_y_) return mean_y_(*this, eta);
  return mean_and_variance(eta).first;
}

double Likelihood::output_variance(double eta) const {
  if (var_y_) return var_y_(*this, eta);
  return mean_and_variance(eta).second;
}

double Likelihood::sample(double eta, std::mt19937_64& rng) const {
  if (!sampler_) throw UnsupportedSamplerError("no sampler for " + id_);
  return sampler_(*this, eta, rng);
}

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

namespace {

LinkMap identity_link() {
  LinkMap l;
  l.name = "canonical";
  l.theta = [](double e) { return e; };
  l.dtheta = [](double) { return 1.0; };
  l.d2theta = [](double) { return 0.0; };
  l.d3theta = [](double) { return 0.0; };
  return l;
}

LinkMap neg_exp_link() {  // theta = -e^{-eta}
  LinkMap l;
  l.name = "log-mean";
  l.theta = [](double e) { return -std::exp(-e); };
  l.dtheta = [](double e) { return std::exp(-e); };
  l.d2theta = [](double e) { return -std::exp(-e); };
  l.d3theta = [](double e) { return std::exp(-e); };
  return l;
}

LinkMap exp_link() {  // theta = e^{eta}
  LinkMap l;
  l.name = "log-shape";
  l.theta = [](double e) { return std::exp(e); };
  l.dtheta = [](double e) { return std::exp(e); };
  l.d2theta = [](double e) { return std::exp(e); };
  l.d3theta = [](double e) { return std::exp(e); };
  return l;
}

LinkMap logistic_link() {  // theta = sigma(eta)
  LinkMap l;
  l.name = "logistic";
  l.theta = [](double e) { return sigmoid(e); };
  l.dtheta = [](double e) {
    const double s = sigmoid(e);
    return s * sigmoid(-e);
  };
  l.d2theta = [](double e) {
    const double s = sigmoid(e);
    return s * sigmoid(-e) * (1.0 - 2.0 * s);
  };
  l.d3theta = [](double e) {
    const double s = sigmoid(e);
    return s * sigmoid(-e) * (1.0 - 6.0 * s + 6.0 * s * s);
  };
  return l;
}

LinkMap flipped_logloss_link() {  // theta = -log(1+e^{-eta})
  LinkMap l;
  l.name = "flipped-log-loss";
  l.theta = [](double e) { return -softplus(-e); };
  l.dtheta = [](double e) { return sigmoid(-e); };
  l.d2theta = [](double e) { return -sigmoid(-e) * sigmoid(e); };
  l.d3theta = [](double e) {
    const double s = sigmoid(-e);
    return -s * sigmoid(e) * (2.0 * s - 1.0);
  };
  return l;
}

LinkMap linearized_logloss_link() {  // theta = log(log(1+e^{eta}))
  LinkMap l;
  l.name = "linearized-log-loss";
  auto sp = [](double e) { return softplus(e); };
  l.theta = [sp](double e) { return std::log(sp(e)); };
  l.dtheta = [sp](double e) { return sigmoid(e) / sp(e); };
  l.d2theta = [sp](double e) {
    const double s = sigmoid(e), L = sp(e);
    return s * (1.0 - s) / L - s * s / (L * L);
  };
  l.d3theta = [sp](double e) {
    const double s = sigmoid(e), L = sp(e);
    return s * (1.0 - s) * (1.0 - 2.0 * s) / L - 3.0 * s * s * (1.0 - s) / (L * L) +
           2.0 * s * s * s / (L * L * L);
  };
  return l;
}

LinkMap probit_link() {  // theta = log Phi(eta) - log Phi(-eta)
  LinkMap l;
  l.name = "probit";
  l.theta = [](double e) { return norm_logcdf(e) - norm_logcdf(-e); };
  l.dtheta = [](double e) {
    return std::exp(norm_logpdf(e) - norm_logcdf(e) - norm_logcdf(-e));
  };
  l.d2theta = [](double e) {
    const double hm = norm_hazard(e), hp = norm_hazard(-e);
    const double d1 = std::exp(norm_logpdf(e) - norm_logcdf(e) - norm_logcdf(-e));
    return d1 * (-e - hm + hp);
  };
  l.d3theta = [](double e) {
    const double hm = norm_hazard(e), hp = norm_hazard(-e);
    const double d1 = std::exp(norm_logpdf(e) - norm_logcdf(e) - norm_logcdf(-e));
    const double r = -e - hm + hp;
    const double dr = -1.0 + hm * (e + hm) + hp * (hp - e);
    return d1 * (r * r + dr);
  };
  l.g = [](double m, double) {
    if (!(m > 0.0 && m < 1.0)) throw DomainError("probit link needs mean in (0,1)");
    // Newton on Phi(eta) = m, seeded by the logit approximation.
    double e = 1.7 * std::log(m / (1.0 - m)) / 2.0;
    for (int it = 0; it < 60; ++it) {
      const double f = 0.5 * std::erfc(-e / std::sqrt(2.0)) - m;
      if (std::abs(f) < 1e-15) break;
      e -= f / std::exp(norm_logpdf(e));
    }
    return e;
  };
  l.g_inv = [](double e, double) { return 0.5 * std::erfc(-e / std::sqrt(2.0)); };
  return l;
}

// ---- distributions --------------------------------------------------------

DistributionSpec gaussian_dist() {
  DistributionSpec d;
  d.support = {SupportKind::Reals};
  d.T = [](double y) { return y; };
  d.a = [](double p) { return p; };
  d.da = [](double) { return 1.0; };
  d.b = [](double th, double) { return 0.5 * th * th; };
  d.db = [](double th, double) { return th; };
  d.d2b = [](double, double) { return 1.0; };
  d.d3b = [](double, double) { return 0.0; };
  d.db_inv = [](double m, double) { return m; };
  d.c = [](double p, double y) { return -0.5 * y * y / p - 0.5 * std::log(2.0 * M_PI * p); };
  d.dc = [](double p, double y) { return 0.5 * y * y / (p * p) - 0.5 / p; };
  return d;
}

DistributionSpec gamma_shape_dist() {
  DistributionSpec d;
  d.support = {SupportKind::PositiveReals};
  d.T = [](double y) { return y; };
  d.a = [](double p) { return p; };
  d.da = [](double) { return 1.0; };
  d.b = [](double th, double) {
    if (!(th < 0.0)) throw DomainError("gamma_shape: theta must be negative");
    return -std::log(-th);
  };
  d.db = [](double th, double) { return -1.0 / th; };
  d.d2b = [](double th, double) { return 1.0 / (th * th); };
  d.d3b = [](double th, double) { return -2.0 / (th * th * th); };
  d.db_inv = [](double m, double) { return -1.0 / m; };
  d.c = [](double p, double y) {
    const double k = 1.0 / p;
    return (k - 1.0) * std::log(y) + k * std::log(k) - std::lgamma(k);
  };
  d.dc = [](double p, double y) {
    const double k = 1.0 / p;
    return k * k * (polygamma(0, k) - std::log(y) - std::log(k) - 1.0);
  };
  return d;
}

DistributionSpec gamma_scale_dist() {
  DistributionSpec d;
  d.support = {SupportKind::PositiveReals};
  d.T = [](double y) { return std::log(y); };
  d.a = [](double p) { return p; };
  d.da = [](double) { return 1.0; };
  d.partition_depends_on_phi = true;
  d.b = [](double th, double p) {
    if (!(th > 0.0)) throw DomainError("gamma_scale: theta must be positive");
    return th * std::log(p) + p * std::lgamma(th / p);
  };
  d.db = [](double th, double p) { return std::log(p) + polygamma(0, th / p); };
  d.d2b = [](double th, double p) { return polygamma(1, th / p) / p; };
  d.d3b = [](double th, double p) { return polygamma(2, th / p) / (p * p); };
  d.db_inv = [](double m, double p) { return p * inverse_digamma(m - std::log(p)); };
  d.b_dphi = [](double th, double p) {
    const double x = th / p;
    return th / p + std::lgamma(x) - x * polygamma(0, x);
  };
  d.db_dphi = [](double th, double p) {
    const double x = th / p;
    return 1.0 / p - x * polygamma(1, x) / p;
  };
  d.d2b_dphi = [](double th, double p) {
    const double x = th / p;
    return -polygamma(1, x) / (p * p) - x * polygamma(2, x) / (p * p);
  };
  d.c = [](double p, double y) { return -y / p - std::log(y); };
  d.dc = [](double p, double y) { return y / (p * p); };
  return d;
}

DistributionSpec inv_gaussian_dist() {
  DistributionSpec d;
  d.support = {SupportKind::PositiveReals};
  d.T = [](double y) { return y; };
  d.a = [](double p) { return p; };
  d.da = [](double) { return 1.0; };
  d.b = [](double th, double) {
    if (!(th < 0.0)) throw DomainError("inv_gaussian: theta must be negative");
    return -std::sqrt(-2.0 * th);
  };
  d.db = [](double th, double) { return 1.0 / std::sqrt(-2.0 * th); };
  d.d2b = [](double th, double) { return std::pow(-2.0 * th, -1.5); };
  d.d3b = [](double th, double) { return 3.0 * std::pow(-2.0 * th, -2.5); };
  d.db_inv = [](double m, double) { return -0.5 / (m * m); };
  d.c = [](double p, double y) {
    return -0.5 * std::log(2.0 * M_PI * y * y * y * p) - 0.5 / (y * p);
  };
  d.dc = [](double p, double y) { return -0.5 / p + 0.5 / (y * p * p); };
  return d;
}

DistributionSpec poisson_dist() {
  DistributionSpec d;
  d.support = {SupportKind::Counts};
  d.T = [](double y) { return y; };
  d.a = [](double p) { return p; };
  d.da = [](double) { return 1.0; };
  d.b = [](double th, double) { return std::exp(th); };
  d.db = [](double th, double) { return std::exp(th); };
  d.d2b = [](double th, double) { return std::exp(th); };
  d.d3b = [](double th, double) { return std::exp(th); };
  d.db_inv = [](double m, double) { return std::log(m); };
  d.c = [](double, double y) { return -lfact(y); };
  d.dc = [](double, double) { return 0.0; };
  return d;
}

DistributionSpec neg_binomial_dist() {
  DistributionSpec d;
  d.support = {SupportKind::Counts};
  d.T = [](double y) { return y; };
  d.a = [](double p) { return p; };
  d.da = [](double) { return 1.0; };
  d.partition_depends_on_phi = true;
  // q = e^{theta/phi} in (0,1); computed via expm1 for the 1-q tail.
  auto one_minus_q = [](double th, double p) { return -std::expm1(th / p); };
  d.b = [one_minus_q](double th, double p) {
    if (!(th < 0.0)) throw DomainError("neg_binomial: theta must be negative");
    const double omq = one_minus_q(th, p);
    if (omq <= 0.0) return std::log(-p / th);  // 1-q ~ -th/p underflowed
    return -std::log(omq);
  };
  d.db = [one_minus_q](double th, double p) {
    const double q = std::exp(th / p);
    return q / (p * one_minus_q(th, p));
  };
  d.d2b = [one_minus_q](double th, double p) {
    const double q = std::exp(th / p), omq = one_minus_q(th, p);
    return q / (p * p * omq * omq);
  };
  d.d3b = [one_minus_q](double th, double p) {
    const double q = std::exp(th / p), omq = one_minus_q(th, p);
    return q * (1.0 + q) / (p * p * p * omq * omq * omq);
  };
  d.db_inv = [](double m, double p) {
    // mean m = q/(p(1-q)) -> q = mp/(1+mp)
    const double q = m * p / (1.0 + m * p);
    return p * std::log(q);
  };
  d.b_dphi = [one_minus_q](double th, double p) {
    const double s = th / p, q = std::exp(s);
    return -(s / p) * q / one_minus_q(th, p);
  };
  d.db_dphi = [one_minus_q](double th, double p) {
    const double s = th / p, q = std::exp(s), omq = one_minus_q(th, p);
    const double h = q / omq, dh = q / (omq * omq);
    return -(h + s * dh) / (p * p);
  };
  d.d2b_dphi = [one_minus_q](double th, double p) {
    const double s = th / p, q = std::exp(s), omq = one_minus_q(th, p);
    const double dh = q / (omq * omq);
    const double d2h = q * (1.0 + q) / (omq * omq * omq);
    return -(2.0 * dh + s * d2h) / (p * p * p);
  };
  d.c = [](double p, double y) {
    const double k = 1.0 / p;
    return std::lgamma(y + k) - lfact(y) - std::lgamma(k);
  };
  d.dc = [](double p, double y) {
    const double k = 1.0 / p;
    return (polygamma(0, k) - polygamma(0, y + k)) * k / p;
  };
  return d;
}

DistributionSpec com_poisson_dist() {
  DistributionSpec d;
  d.support = {SupportKind::Counts};
  d.T = [](double y) { return y; };
  d.a = [](double p) { return 1.0 / p; };
  d.da = [](double p) { return -1.0 / (p * p); };
  d.partition_depends_on_phi = true;
  d.b = [](double th, double p) { return com_poisson_moments(th, p).log_s / p; };
  d.db = [](double th, double p) { return com_poisson_moments(th, p).mean; };
  d.d2b = [](double th, double p) {
    const auto m = com_poisson_moments(th, p);
    return p * m.var;
  };
  d.d3b = [](double th, double p) {
    const auto m = com_poisson_moments(th, p);
    return p * p * m.third_central;
  };
  d.db_inv = [](double m, double p) {
    double v = m - 0.5 / p + 0.5;  // paper's mean approximation as the seed
    double th = std::log(std::max(v, 1e-8));
    for (int it = 0; it < 60; ++it) {
      const auto mm = com_poisson_moments(th, p);
      const double f = mm.mean - m;
      if (std::abs(f) < 1e-11 * std::max(1.0, std::abs(m))) break;
      th -= f / std::max(p * mm.var, 1e-12);
    }
    return th;
  };
  d.b_dphi = [](double th, double p) {
    const auto m = com_poisson_moments(th, p);
    const double dlogs_dnu = th * m.mean - m.e_logfact;
    return -m.log_s / (p * p) + dlogs_dnu / p;
  };
  d.db_dphi = [](double th, double p) {
    const auto m = com_poisson_moments(th, p);
    return th * m.var - m.cov_n_logfact;
  };
  d.d2b_dphi = [](double th, double p) {
    const auto m = com_poisson_moments(th, p);
    const double dvar_dnu =
        th * m.third_central - (m.cov_n2_logfact - 2.0 * m.mean * m.cov_n_logfact);
    return m.var + p * dvar_dnu;
  };
  d.c = [](double p, double y) { return -p * lfact(y); };
  d.dc = [](double, double y) { return -lfact(y); };
  return d;
}

DistributionSpec binomial_dist(int n_trials) {
  DistributionSpec d;
  d.support = {SupportKind::Fractions, n_trials};
  d.T = [](double y) { return y; };
  d.a = [](double p) { return p; };
  d.da = [](double) { return 1.0; };
  d.b = [](double th, double) { return softplus(th); };
  d.db = [](double th, double) { return sigmoid(th); };
  d.d2b = [](double th, double) { return sigmoid(th) * sigmoid(-th); };
  d.d3b = [](double th, double) {
    const double s = sigmoid(th);
    return s * sigmoid(-th) * (1.0 - 2.0 * s);
  };
  d.db_inv = [](double m, double) { return std::log(m / (1.0 - m)); };
  d.c = [n_trials](double, double y) {
    const double k = y * n_trials;
    return lfact(n_trials) - lfact(k) - lfact(n_trials - k);
  };
  d.dc = [](double, double) { return 0.0; };
  return d;
}

DistributionSpec beta_dist() {
  DistributionSpec d;
  d.support = {SupportKind::UnitInterval};
  d.T = [](double y) { return std::log(y / (1.0 - y)); };
  d.a = [](double p) { return p; };
  d.da = [](double) { return 1.0; };
  d.partition_depends_on_phi = true;
  d.b = [](double th, double p) {
    if (!(th > 0.0 && th < 1.0)) throw DomainError("beta: theta must be in (0,1)");
    return p * (std::lgamma(th / p) + std::lgamma((1.0 - th) / p));
  };
  d.db = [](double th, double p) {
    return polygamma(0, th / p) - polygamma(0, (1.0 - th) / p);
  };
  d.d2b = [](double th, double p) {
    return (polygamma(1, th / p) + polygamma(1, (1.0 - th) / p)) / p;
  };
  d.d3b = [](double th, double p) {
    return (polygamma(2, th / p) - polygamma(2, (1.0 - th) / p)) / (p * p);
  };
  d.db_inv = [](double m, double p) {
    // solve psi0(x) - psi0(R - x) = m on (0, R), R = 1/p; monotone increasing
    const double r = 1.0 / p;
    double lo = 1e-12 * r, hi = r * (1.0 - 1e-12);
    double x = 0.5 * r;
    for (int it = 0; it < 200; ++it) {
      const double f = polygamma(0, x) - polygamma(0, r - x) - m;
      if (std::abs(f) < 1e-12) break;
      if (f > 0.0) hi = x; else lo = x;
      const double fp = polygamma(1, x) + polygamma(1, r - x);
      double xn = x - f / fp;
      x = (xn > lo && xn < hi) ? xn : 0.5 * (lo + hi);
    }
    return p * x;  // theta = phi * x
  };
  d.b_dphi = [](double th, double p) {
    const double x1 = th / p, x2 = (1.0 - th) / p;
    return std::lgamma(x1) + std::lgamma(x2) - x1 * polygamma(0, x1) -
           x2 * polygamma(0, x2);
  };
  d.db_dphi = [](double th, double p) {
    const double x1 = th / p, x2 = (1.0 - th) / p;
    return (-x1 * polygamma(1, x1) + x2 * polygamma(1, x2)) / p;
  };
  d.d2b_dphi = [](double th, double p) {
    const double x1 = th / p, x2 = (1.0 - th) / p;
    const double d2 = (polygamma(1, x1) + polygamma(1, x2)) / p;
    return -d2 / p - (x1 * polygamma(2, x1) + x2 * polygamma(2, x2)) / (p * p);
  };
  d.c = [](double p, double y) {
    return std::lgamma(1.0 / p) + (1.0 / p - 1.0) * std::log1p(-y) - std::log(y);
  };
  d.dc = [](double p, double y) {
    return (-polygamma(0, 1.0 / p) - std::log1p(-y)) / (p * p);
  };
  return d;
}

// ---- mean-scale links (g, g_inv) per family -------------------------------

void attach_g(LinkMap& l, std::function<double(double, double)> g,
              std::function<double(double, double)> g_inv) {
  l.g = std::move(g);
  l.g_inv = std::move(g_inv);
}

}  // namespace

const std::vector<std::string>& likelihood_catalog() {
  static const std::vector<std::string> ids = {
      "gaussian",       "gamma_shape", "gamma_scale",        "inv_gaussian",
      "poisson",        "poisson_linear", "com_poisson",     "com_poisson_linear",
      "neg_binomial",   "binomial",    "bernoulli_logit",    "bernoulli_probit",
      "beta"};
  return ids;
}

Likelihood make_likelihood(const std::string& id, double dispersion, int n_trials,
                           double count_offset) {
  auto gauss_sampler = [](const Likelihood& lik, double eta, std::mt19937_64& rng) {
    std::normal_distribution<double> n(eta, std::sqrt(lik.dispersion()));
    return n(rng);
  };

  if (id == "gaussian") {
    LinkMap l = identity_link();
    attach_g(l, [](double m, double) { return m; }, [](double e, double) { return e; });
    Likelihood lik(id, gaussian_dist(), l, dispersion, true, 1, count_offset);
    lik.sampler_ = gauss_sampler;
    return lik;
  }

  if (id == "gamma_shape") {
    LinkMap l = neg_exp_link();
    attach_g(l, [](double m, double) { return std::log(m); },
             [](double e, double) { return std::exp(e); });
    Likelihood lik(id, gamma_shape_dist(), l, dispersion, true, 1, count_offset);
    lik.sampler_ = [](const Likelihood& lk, double eta, std::mt19937_64& rng) {
      const double shape = 1.0 / lk.dispersion();
      const double mean = std::exp(eta);
      std::gamma_distribution<double> g(shape, mean / shape);
      return std::max(g(rng), 1e-10 * mean);  // guard against shape<1 underflow
    };
    return lik;
  }

  if (id == "gamma_scale") {
    LinkMap l = exp_link();
    attach_g(l,
             [](double m, double p) {
               return std::log(p * inverse_digamma(m - std::log(p)));
             },
             [](double e, double p) {
               return std::log(p) + polygamma(0, std::exp(e) / p);
             });
    Likelihood lik(id, gamma_scale_dist(), l, dispersion, true, 1, count_offset);
    lik.mean_y_ = [](const Likelihood& lk, double eta) {
      return lk.link().theta(eta);  // E[y] = shape * scale = theta
    };
    lik.var_y_ = [](const Likelihood& lk, double eta) {
      return lk.link().theta(eta) * lk.dispersion();
    };
    lik.sampler_ = [](const Likelihood& lk, double eta, std::mt19937_64& rng) {
      const double p = lk.dispersion();
      const double mean = std::exp(eta);
      std::gamma_distribution<double> g(mean / p, p);
      return std::max(g(rng), 1e-10 * mean);
    };
    lik.expansion_dphi_ = [](const Likelihood& lk, double y) {
      const double p = lk.dispersion();
      const double x = inverse_digamma(std::log(y) - std::log(p));
      const double dx = -1.0 / (p * polygamma(1, x));
      return 1.0 / p + dx / x;
    };
    return lik;
  }

  if (id == "inv_gaussian") {
    LinkMap l = neg_exp_link();
    attach_g(l, [](double m, double) { return 2.0 * std::log(m) + std::log(2.0); },
             [](double e, double) { return std::exp(0.5 * e) / std::sqrt(2.0); });
    Likelihood lik(id, inv_gaussian_dist(), l, dispersion, true, 1, count_offset);
    lik.sampler_ = [](const Likelihood& lk, double eta, std::mt19937_64& rng) {
      // Michael-Schucany-Haas transform sampler for IG(mu, lambda)
      const double mu = std::exp(0.5 * eta) / std::sqrt(2.0);
      const double lambda = 1.0 / lk.dispersion();
      std::normal_distribution<double> nd(0.0, 1.0);
      std::uniform_real_distribution<double> ud(0.0, 1.0);
      const double nu = nd(rng);
      const double w = mu * nu * nu;
      const double x = mu + mu / (2.0 * lambda) * (w - std::sqrt(w * (4.0 * lambda + w)));
      const double floor = 1e-10 * mu;
      return (ud(rng) <= mu / (mu + x)) ? std::max(x, floor) : mu * mu / std::max(x, floor);
    };
    return lik;
  }

  auto poisson_sampler = [](const Likelihood& lk, double eta, std::mt19937_64& rng) {
    const double mean = lk.link().g_inv(eta, lk.dispersion());
    std::poisson_distribution<long> p(mean);
    return static_cast<double>(p(rng));
  };

  if (id == "poisson" || id == "poisson_linear") {
    LinkMap l;
    if (id == "poisson") {
      l = identity_link();
      attach_g(l, [](double m, double) { return std::log(m); },
               [](double e, double) { return std::exp(e); });
    } else {
      l = linearized_logloss_link();
      attach_g(l, [](double m, double) { return std::log(std::expm1(m)); },
               [](double e, double) { return softplus(e); });
    }
    Likelihood lik(id, poisson_dist(), l, 1.0, false, 1, count_offset);
    lik.sampler_ = poisson_sampler;
    return lik;
  }

  if (id == "com_poisson" || id == "com_poisson_linear") {
    LinkMap l;
    if (id == "com_poisson") {
      l = identity_link();
      attach_g(l,
               [](double m, double p) {
                 const double v = m - 0.5 / p + 0.5;
                 if (!(v > 0.0))
                   throw UndefinedPointError("com_poisson link undefined for this mean");
                 return std::log(v);
               },
               [](double e, double p) { return std::exp(e) + 0.5 / p - 0.5; });
    } else {
      l = linearized_logloss_link();
      attach_g(l,
               [](double m, double p) {
                 const double v = m - 0.5 / p + 0.5;
                 if (!(v > 0.0))
                   throw UndefinedPointError("com_poisson link undefined for this mean");
                 return std::log(std::expm1(v));
               },
               [](double e, double p) { return softplus(e) + 0.5 / p - 0.5; });
    }
    Likelihood lik(id, com_poisson_dist(), l, dispersion, true, 1, count_offset);
    lik.ll_override_ = [](const Likelihood& lk, double y, double eta) {
      // phi*y*theta - log S(e^theta, phi) - phi*log y!
      const double p = lk.dispersion();
      const double th = lk.link().theta(eta);
      return p * (y * th - lfact(y)) - com_poisson_moments(th, p).log_s;
    };
    lik.mean_y_ = [](const Likelihood& lk, double eta) {
      return com_poisson_moments(lk.link().theta(eta), lk.dispersion()).mean;
    };
    lik.var_y_ = [](const Likelihood& lk, double eta) {
      return com_poisson_moments(lk.link().theta(eta), lk.dispersion()).var;
    };
    lik.sampler_ = [](const Likelihood& lk, double eta, std::mt19937_64& rng) {
      // inverse-CDF over the truncated support
      const double p = lk.dispersion();
      const double th = lk.link().theta(eta);
      const auto mm = com_poisson_moments(th, p);
      if (th > 9.0) throw UnsupportedSamplerError("com_poisson: mean too large to tabulate");
      std::uniform_real_distribution<double> ud(0.0, 1.0);
      const double u = ud(rng);
      double cdf = 0.0;
      const long cap = static_cast<long>(mm.mean + 40.0 * std::sqrt(mm.var + 1.0)) + 1000;
      for (long n = 0; n <= cap; ++n) {
        cdf += std::exp(p * (n * th - lfact_fast(n)) - mm.log_s);
        if (u <= cdf) return static_cast<double>(n);
      }
      return static_cast<double>(cap);
    };
    lik.expansion_dphi_ = [](const Likelihood& lk, double y) {
      const double p = lk.dispersion();
      const double v = y + lk.count_offset() - 0.5 / p + 0.5;
      double base = 0.5 / (p * p * v);
      if (lk.id() == "com_poisson_linear") {
        const double ev = std::exp(v);
        base = (0.5 / (p * p)) * ev / (ev - 1.0);
      }
      return base;
    };
    return lik;
  }

  if (id == "neg_binomial") {
    LinkMap l = flipped_logloss_link();
    attach_g(l,
             [](double m, double p) {
               if (!(m > 0.0)) throw UndefinedPointError("neg_binomial link needs mean > 0");
               const double a = m * p / (1.0 + m * p);
               return -std::log(std::expm1(-p * std::log(a)));
             },
             [](double e, double p) {
               const double q = std::exp(-softplus(-e) / p);
               return q / (p * (-std::expm1(-softplus(-e) / p)));
             });
    Likelihood lik(id, neg_binomial_dist(), l, dispersion, true, 1, count_offset);
    lik.ll_override_ = [](const Likelihood& lk, double y, double eta) {
      // y log(1-p') + (1/phi) log p' + c, with stable 1-q handling
      const double p = lk.dispersion();
      const double sm = softplus(-eta);            // -theta
      const double log_q = -sm / p;                // log(1-p')
      double log_omq;                              // log p'
      const double omq = -std::expm1(log_q);
      if (omq > 0.0) log_omq = std::log(omq);
      else log_omq = std::log(sm / p);             // sm/p underflowed inside expm1
      const double k = 1.0 / p;
      return y * log_q + k * log_omq + std::lgamma(y + k) - lfact(y) - std::lgamma(k);
    };
    lik.sampler_ = [](const Likelihood& lk, double eta, std::mt19937_64& rng) {
      // gamma-Poisson mixture with matching mean/variance
      const double p = lk.dispersion();
      const double mean = lk.link().g_inv(eta, p);
      std::gamma_distribution<double> g(1.0 / p, p * mean);
      std::poisson_distribution<long> po(std::max(g(rng), 1e-12));
      return static_cast<double>(po(rng));
    };
    lik.expansion_dphi_ = [](const Likelihood& lk, double y) {
      const double p = lk.dispersion();
      const double m = y + lk.count_offset();
      const double a = m * p / (1.0 + m * p);
      const double log_a = std::log(a);
      const double bb = std::exp(-p * log_a);
      const double da_dp = m / ((1.0 + m * p) * (1.0 + m * p));
      const double dbb = bb * (-log_a - p * da_dp / a);
      return -dbb / (bb - 1.0);
    };
    return lik;
  }

  if (id == "binomial" || id == "bernoulli_logit" || id == "bernoulli_probit") {
    const int n = (id == "binomial") ? n_trials : 1;
    if (n < 1) throw DomainError("binomial: trial count must be >= 1");
    LinkMap l;
    if (id == "bernoulli_probit") {
      l = probit_link();
    } else {
      l = identity_link();
      attach_g(l, [](double m, double) { return std::log(m / (1.0 - m)); },
               [](double e, double) { return sigmoid(e); });
    }
    Likelihood lik(id, binomial_dist(n), l, 1.0 / n, false, n, count_offset);
    lik.agnostic_expansion_ = true;
    lik.sampler_ = [](const Likelihood& lk, double eta, std::mt19937_64& rng) {
      const double pr = lk.link().g_inv(eta, lk.dispersion());
      std::binomial_distribution<int> b(lk.n_trials(), pr);
      return static_cast<double>(b(rng)) / lk.n_trials();
    };
    return lik;
  }

  if (id == "beta") {
    LinkMap l = logistic_link();
    attach_g(l,
             [](double m, double p) {
               const double th = beta_dist().db_inv(m, p);
               return std::log(th / (1.0 - th));
             },
             [](double e, double p) {
               const double th = sigmoid(e);
               return polygamma(0, th / p) - polygamma(0, (1.0 - th) / p);
             });
    Likelihood lik(id, beta_dist(), l, dispersion, true, 1, count_offset);
    lik.ll_override_ = [](const Likelihood& lk, double y, double eta) {
      // stable in both eta tails: 1-theta computed as sigmoid(-eta)
      const double p = lk.dispersion();
      const double t1 = sigmoid(eta) / p, t2 = sigmoid(-eta) / p;
      const double lg1 = (t1 > 0.0) ? std::lgamma(t1) : softplus(-eta) + std::log(p);
      const double lg2 = (t2 > 0.0) ? std::lgamma(t2) : softplus(eta) + std::log(p);
      const double ty = std::log(y) - std::log1p(-y);
      return (ty * sigmoid(eta) - p * (lg1 + lg2)) / p + lk.dist().c(p, y);
    };
    lik.mean_y_ = [](const Likelihood& lk, double eta) { return lk.link().theta(eta); };
    lik.var_y_ = [](const Likelihood& lk, double eta) {
      const double th = lk.link().theta(eta), p = lk.dispersion();
      return th * (1.0 - th) * p / (1.0 + p);
    };
    lik.sampler_ = [](const Likelihood& lk, double eta, std::mt19937_64& rng) {
      const double p = lk.dispersion();
      const double a = sigmoid(eta) / p, b = sigmoid(-eta) / p;
      std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
      const double x = ga(rng), z = gb(rng);
      double y = x / (x + z);
      return std::clamp(y, 1e-12, 1.0 - 1e-12);
    };
    lik.expansion_dphi_ = [](const Likelihood& lk, double y) {
      const double p = lk.dispersion();
      const double r = 1.0 / p;
      const double x = lk.dist().db_inv(lk.dist().T(y), p) / p;  // theta/phi
      const double psi1a = polygamma(1, x), psi1b = polygamma(1, r - x);
      const double dx = -psi1b / (p * p * (psi1a + psi1b));
      const double th = p * x;
      return (x + p * dx) / (th * (1.0 - th));
    };
    return lik;
  }

  throw DomainError("unknown likelihood id '" + id + "'");
}

}  // namespace ggpm
