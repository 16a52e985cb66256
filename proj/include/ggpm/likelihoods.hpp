#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ggpm/common.hpp"
#include "ggpm/numerics.hpp"

namespace ggpm {

enum class SupportKind { Reals, PositiveReals, UnitInterval, Counts, Fractions };

struct Support {
  SupportKind kind = SupportKind::Reals;
  int n_trials = 1;  // Fractions only: y in {0, 1/N, ..., 1}

  bool contains(double y) const;
  bool is_count_like() const {
    return kind == SupportKind::Counts || kind == SupportKind::Fractions;
  }
  std::string describe() const;
};

// Parameter functions of a single-parameter exponential family:
//   log p(y|theta,phi) = [T(y) theta - b(theta)] / a(phi) + c(phi, y).
// Partition derivatives take (theta, phi); the phi argument only matters when
// partition_depends_on_phi is set (negative binomial, COM-Poisson, Gamma-scale,
// Beta), where the extra *_dphi hooks feed the dispersion gradients.
struct DistributionSpec {
  std::function<double(double)> T;
  std::function<double(double)> a, da;
  std::function<double(double, double)> b, db, d2b, d3b;
  std::function<double(double, double)> db_inv;  // (mean, phi) -> theta
  std::function<double(double, double)> c, dc;   // (phi, y)
  bool partition_depends_on_phi = false;
  std::function<double(double, double)> b_dphi, db_dphi, d2b_dphi;
  Support support;
};

// theta(eta) with derivatives, plus the mean-scale link g / g^{-1}.
// g may depend on the dispersion (Gamma-scale, COM-Poisson links do).
struct LinkMap {
  std::string name;
  std::function<double(double)> theta, dtheta, d2theta, d3theta;
  std::function<double(double, double)> g;      // (mean, phi) -> eta
  std::function<double(double, double)> g_inv;  // (eta, phi) -> mean
};

struct DerivativePair {
  double u;     // d/deta log p
  double winv;  // -d^2/deta^2 log p  (= 1/w)
};

// One distribution/link pair from the catalog. Immutable after construction;
// safe to share across threads.
class Likelihood {
 public:
  Likelihood(std::string id, DistributionSpec dist, LinkMap link, double dispersion,
             bool free_dispersion, int n_trials, double count_offset);

  const std::string& id() const { return id_; }
  const DistributionSpec& dist() const { return dist_; }
  const LinkMap& link() const { return link_; }
  const Support& support() const { return dist_.support; }

  double dispersion() const { return phi_; }
  bool has_free_dispersion() const { return free_dispersion_; }
  int n_trials() const { return n_trials_; }
  double count_offset() const { return offset_; }

  Likelihood with_dispersion(double phi) const;
  Likelihood with_count_offset(double c) const;

  // log p(y | theta(eta), phi); throws DomainError / OverflowError.
  double log_likelihood(double y, double eta) const;
  // Non-throwing variant for quadrature integrands; -inf where the density
  // underflows.
  double log_likelihood_raw(double y, double eta) const;

  DerivativePair derivative_functions(double y, double eta) const;
  double third_eta_derivative(double y, double eta) const;

  // Dispersion partials at fixed eta (zero-returning for fixed-dispersion
  // families). All include the b_phi hooks where applicable.
  double dloglik_dphi(double y, double eta) const;
  double du_dphi(double y, double eta) const;
  double dwinv_dphi(double y, double eta) const;

  // Expansion point machinery for the closed-form engine.
  double canonical_expansion_point(double y) const;
  bool agnostic_expansion() const { return agnostic_expansion_; }
  double expansion_point_dphi(double y) const;

  // Mean/variance of the sufficient statistic T(y).
  std::pair<double, double> mean_and_variance(double eta) const;
  // Mean/variance of the raw output y (differ from T moments for Gamma-scale
  // and Beta).
  double output_mean(double eta) const;
  double output_variance(double eta) const;

  double sample(double eta, std::mt19937_64& rng) const;

  void validate(double y) const;  // DomainError with support description

 private:
  std::string id_;
  DistributionSpec dist_;
  LinkMap link_;
  double phi_;
  bool free_dispersion_;
  int n_trials_;
  double offset_;
  bool agnostic_expansion_ = false;

  // optional stable overrides; defaults compose the spec pieces
  std::function<double(const Likelihood&, double, double)> ll_override_;
  std::function<double(const Likelihood&, double)> mean_y_, var_y_;
  std::function<double(const Likelihood&, double, std::mt19937_64&)> sampler_;
  std::function<double(const Likelihood&, double)> expansion_dphi_;

  friend Likelihood make_likelihood(const std::string&, double, int, double);
  double ll_impl(double y, double eta) const;
};

struct LikelihoodConfig {
  double dispersion = 1.0;
  int n_trials = 1;      // binomial
  double offset = 0.0;   // count expansion-point offset c
};

Likelihood make_likelihood(const std::string& id, double dispersion = 1.0,
                           int n_trials = 1, double count_offset = 0.0);
inline Likelihood make_likelihood(const std::string& id, const LikelihoodConfig& cfg) {
  return make_likelihood(id, cfg.dispersion, cfg.n_trials, cfg.offset);
}

const std::vector<std::string>& likelihood_catalog();

// log S(mu, nu) for the Conway-Maxwell-Poisson partition, by log-space series
// summation with a certified relative tail bound.
double com_poisson_log_partition(double mu, double nu);

// Series summaries used by the COM-Poisson partition derivatives.
struct ComPoissonMoments {
  double log_s = 0.0;
  double mean = 0.0, var = 0.0, third_central = 0.0;
  double e_logfact = 0.0;       // E[log n!]
  double cov_n_logfact = 0.0;   // Cov(n, log n!)
  double cov_n2_logfact = 0.0;  // Cov(n^2, log n!)
};
ComPoissonMoments com_poisson_moments(double log_mu, double nu);

}  // namespace ggpm
