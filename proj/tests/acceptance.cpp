#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "ggpm/io.hpp"
#include "ggpm/model.hpp"
#include "oracles.hpp"

using namespace ggpm;

// ---------------------------------------------------------------------------
// One PASS/FAIL line per criterion, on top of the per-assertion bookkeeping.
// ---------------------------------------------------------------------------
namespace {

struct Criterion {
  int number;
  std::string title;
  bool all = true;
  Criterion(int n, std::string t) : number(n), title(std::move(t)) {}
  void expect(bool cond, const std::string& what) {
    all = all && cond;
    CHECK_MESSAGE(cond, what);
  }
  ~Criterion() {
    std::printf("[%s] criterion %d: %s\n", all ? "PASS" : "FAIL", number, title.c_str());
    std::fflush(stdout);
  }
};

Mat random_inputs(int n, int d, std::mt19937_64& rng, double lo = 0.0, double hi = 4.0) {
  std::uniform_real_distribution<double> ud(lo, hi);
  Mat x(n, d);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = ud(rng);
  return x;
}

InferOpts tight_opts() {
  InferOpts o;
  o.ep.tol = 1e-10;
  o.ep.max_sweeps = 300;
  o.kld.gtol = 1e-9;
  o.kld.max_iter = 6000;
  o.newton.tol = 1e-11;
  return o;
}

}  // namespace

TEST_CASE("criterion 1: gaussian collapse of all four engines") {
  Criterion crit(1, "all engines reproduce exact GPR on 25 random Gaussian instances");
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> nd_n(4, 30), nd_d(1, 3);
  std::uniform_real_distribution<double> hyp(-0.6, 0.6), noise_d(0.2, 1.5);
  std::normal_distribution<double> gauss;

  for (int inst = 0; inst < 25; ++inst) {
    const int n = nd_n(rng), d = nd_d(rng);
    const Mat x = random_inputs(n, d, rng);
    KernelSpec kernel = (inst % 2 == 0)
                            ? KernelSpec::rbf(hyp(rng), hyp(rng))
                            : KernelSpec::sum({KernelSpec::linear(hyp(rng) - 1.0),
                                               KernelSpec::rbf(hyp(rng), hyp(rng))});
    const double noise = noise_d(rng);
    auto lik = make_likelihood("gaussian", noise);
    Vec y(n);
    for (int i = 0; i < n; ++i) y[i] = gauss(rng);

    const Mat k = gram(kernel, x);
    const double exact = oracles::gpr_log_marginal(k, y, noise);
    Mat a = k;
    a.diagonal().array() += noise;
    const Vec exact_mean = k * a.ldlt().solve(y);

    const InferOpts opts = tight_opts();
    for (EngineId e : {EngineId::Taylor, EngineId::Laplace, EngineId::Ep, EngineId::Kld}) {
      const InferenceResult r = infer(e, lik, kernel, x, y, opts);
      crit.expect(std::abs(r.log_marginal - exact) < 1e-6,
                  engine_to_string(e) + " marginal off by " +
                      std::to_string(r.log_marginal - exact) + " on instance " +
                      std::to_string(inst));
      crit.expect((r.posterior.mean - exact_mean).lpNorm<Eigen::Infinity>() < 1e-6,
                  engine_to_string(e) + " mean mismatch on instance " + std::to_string(inst));
    }
  }
}

TEST_CASE("criterion 2: marginal gradient suite over the whole catalog") {
  Criterion crit(2, "analytic marginal gradients match finite differences for every "
                    "likelihood x engine");
  struct Cfg {
    std::string id;
    double phi;
    int n_trials = 1;
  };
  const std::vector<Cfg> cfgs = {
      {"gaussian", 0.6},        {"gamma_shape", 0.7},   {"gamma_scale", 0.9},
      {"inv_gaussian", 0.4},    {"poisson", 1.0},       {"poisson_linear", 1.0},
      {"com_poisson", 1.3},     {"com_poisson_linear", 0.9}, {"neg_binomial", 0.5},
      {"binomial", 1.0, 5},     {"bernoulli_logit", 1.0},    {"bernoulli_probit", 1.0},
      {"beta", 0.6}};

  std::mt19937_64 rng(202);
  for (const Cfg& c : cfgs) {
    const Likelihood gen = make_likelihood(c.id, c.phi, c.n_trials, 0.5);
    const Mat x = random_inputs(12, 1, rng);
    const KernelSpec gen_kernel = KernelSpec::rbf(0.15, 0.2);
    const Vec y = sample_dataset(gen, gen_kernel, x, 909 + rng() % 1000).y;

    for (EngineId e : {EngineId::Taylor, EngineId::Laplace, EngineId::Ep, EngineId::Kld}) {
      const bool cheap_fd = (e == EngineId::Taylor || e == EngineId::Laplace);
      const double tol = cheap_fd ? 1e-4 : 1e-3;
      // step sizes balance truncation against the optimized-value resolution
      const double step = cheap_fd ? 1e-5 : (e == EngineId::Kld ? 1e-3 : 1e-4);
      auto obj = [&](const Vec& h, Vec* g) -> double {
        Likelihood lik = gen.has_free_dispersion()
                             ? gen.with_dispersion(std::exp(h[h.size() - 1]))
                             : gen;
        KernelSpec kernel = KernelSpec::rbf(h[0], h[1]);
        InferOpts opts;
        opts.ep.tol = 1e-9;
        opts.ep.max_sweeps = 200;
        opts.newton.tol = 1e-11;
        opts.kld.gtol = 1e-8;
        opts.kld.max_iter = 1500;
        opts.want_gradients = (g != nullptr);
        const InferenceResult r = infer(e, lik, kernel, x, y, opts);
        if (g) {
          g->resize(h.size());
          (*g)[0] = -r.grad[0];
          (*g)[1] = -r.grad[1];
          if (gen.has_free_dispersion()) (*g)[2] = -r.grad[2];
        }
        return -r.log_marginal;
      };
      Vec h0(gen.has_free_dispersion() ? 3 : 2);
      h0[0] = 0.05;
      h0[1] = -0.15;
      if (gen.has_free_dispersion()) h0[2] = std::log(c.phi) + 0.1;
      const GradCheckResult gc = check_gradient(obj, h0, step);
      crit.expect(gc.max_rel_error < tol,
                  c.id + "/" + engine_to_string(e) + " rel err " +
                      std::to_string(gc.max_rel_error));
      std::printf("  grad %-20s %-8s max rel err %.2e\n", c.id.c_str(),
                  engine_to_string(e).c_str(), gc.max_rel_error);
      std::fflush(stdout);
    }
  }
}

TEST_CASE("criterion 3: transformed-GP equivalences of the closed-form engine") {
  Criterion crit(3, "Taylor posterior means equal GPR on the transformed targets");
  std::mt19937_64 rng(303);
  const Mat x = random_inputs(15, 2, rng);
  const KernelSpec kernel = KernelSpec::rbf(0.2, 0.3);
  const Mat k = gram(kernel, x);

  {  // (a) bernoulli on +-2 targets with noise 4/N
    auto lik = make_likelihood("bernoulli_logit");
    Vec y(15);
    for (int i = 0; i < 15; ++i) y[i] = (rng() % 2) ? 1.0 : 0.0;
    const InferenceResult r = taylor_infer(lik, kernel, x, y);
    Vec t(15), w(15);
    for (int i = 0; i < 15; ++i) {
      t[i] = 4.0 * (y[i] - 0.5);
      w[i] = 4.0;
    }
    crit.expect((r.posterior.mean - oracles::gpr_mean(k, t, w)).lpNorm<Eigen::Infinity>() <
                    1e-10,
                "bernoulli label-regression equivalence");
  }
  {  // (b) poisson with c = 0: targets log y, noise 1/y
    auto lik = make_likelihood("poisson");
    Vec y(15);
    for (int i = 0; i < 15; ++i) y[i] = 1.0 + static_cast<double>(rng() % 6);
    const InferenceResult r = taylor_infer(lik, kernel, x, y);
    Vec t = y.array().log();
    Vec w = y.cwiseInverse();
    crit.expect((r.posterior.mean - oracles::gpr_mean(k, t, w)).lpNorm<Eigen::Infinity>() <
                    1e-10,
                "poisson log-target equivalence");
  }
  {  // (c) gamma-shape: targets log y, noise phi
    const double phi = 0.55;
    auto lik = make_likelihood("gamma_shape", phi);
    const Vec y = sample_dataset(lik, kernel, x, 42).y;
    const InferenceResult r = taylor_infer(lik, kernel, x, y);
    Vec t = y.array().log();
    Vec w = Vec::Constant(15, phi);
    crit.expect((r.posterior.mean - oracles::gpr_mean(k, t, w)).lpNorm<Eigen::Infinity>() <
                    1e-10,
                "gamma-shape log-GP equivalence");
  }
  {  // (d) inverse gaussian: targets 2 log y + log 2, noise 4 phi y
    const double phi = 0.35;
    auto lik = make_likelihood("inv_gaussian", phi);
    const Vec y = sample_dataset(lik, kernel, x, 43).y;
    const InferenceResult r = taylor_infer(lik, kernel, x, y);
    Vec t = (2.0 * y.array().log() + std::log(2.0)).matrix();
    Vec w = 4.0 * phi * y;
    crit.expect((r.posterior.mean - oracles::gpr_mean(k, t, w)).lpNorm<Eigen::Infinity>() <
                    1e-10,
                "inverse-gaussian transformed equivalence");
  }
}

TEST_CASE("criterion 4: posterior-mean ordering (scalar exact, multivariate statistical)") {
  Criterion crit(4, "taylor < laplace < ep ordering, scalar and averaged over the phi/K_w grid");
  // --- scalar part -------------------------------------------------------
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> yv(0.3, 4.0), kv(0.3, 3.0), pv(0.1, 5.0);
  const InferOpts opts = tight_opts();
  for (int trial = 0; trial < 100; ++trial) {
    const double kval = kv(rng), phi = pv(rng), y0 = yv(rng);
    auto lik = make_likelihood("gamma_shape", phi);
    KernelSpec kernel = KernelSpec::rbf(0.5 * std::log(kval), 0.0);
    kernel.jitter_rel = 0.0;
    Mat x(1, 1);
    x << 0.0;
    Vec y(1);
    y << y0;
    const double mu_ta = taylor_infer(lik, kernel, x, y).posterior.mean[0];
    const double mu_la = laplace_infer(lik, kernel, x, y, opts).posterior.mean[0];
    const double mu_ep = ep_infer(lik, kernel, x, y, opts).posterior.mean[0];
    crit.expect(mu_ta < mu_la && mu_la < mu_ep,
                "scalar gamma-shape ordering, trial " + std::to_string(trial));
    const auto bf = oracles::tilted_bf(
        [&](double eta) { return lik.log_likelihood_raw(y0, eta); }, 0.0, kval, 1000001);
    crit.expect(std::abs(mu_ep - bf.mean) < 1e-3,
                "ep vs brute-force posterior mean, trial " + std::to_string(trial));

    auto lik2 = make_likelihood("gamma_scale", std::min(pv(rng), 2.0));
    const double mu_ta2 = taylor_infer(lik2, kernel, x, y).posterior.mean[0];
    const double mu_la2 = laplace_infer(lik2, kernel, x, y, opts).posterior.mean[0];
    const double mu_ep2 = ep_infer(lik2, kernel, x, y, opts).posterior.mean[0];
    crit.expect(mu_ta2 > mu_la2 && mu_la2 > mu_ep2,
                "gamma-scale reversed ordering, trial " + std::to_string(trial));
  }

  // --- multivariate average over the (phi, K_w) grid ----------------------
  const std::vector<double> phis = {0.1, 0.66, 1.66, 3.0, 5.0};
  const std::vector<double> kws = {0.1, 0.66, 1.66, 3.0, 5.0};
  const int trials = 20, n = 40;
  std::vector<double> gap_ta_la_by_phi(phis.size(), 0.0), gap_la_ep_by_phi(phis.size(), 0.0);
  InferOpts mv_opts;
  mv_opts.ep.tol = 1e-8;
  mv_opts.ep.max_sweeps = 150;
  mv_opts.newton.tol = 1e-10;
  mv_opts.want_gradients = false;

  std::mt19937_64 grid_rng(505);
  for (size_t pi = 0; pi < phis.size(); ++pi) {
    for (size_t wi = 0; wi < kws.size(); ++wi) {
      KernelSpec kernel = KernelSpec::rbf(0.5 * std::log(2.0), std::log(kws[wi]));
      auto lik = make_likelihood("gamma_shape", phis[pi]);
      double cell_ta_la = 0.0, cell_la_ep = 0.0;
      for (int t = 0; t < trials; ++t) {
        const Mat x = random_inputs(n, 1, grid_rng, 0.0, 5.0);
        const Vec y = sample_dataset(lik, kernel, x, grid_rng()).y;
        const Vec mu_ta = taylor_infer(lik, kernel, x, y, mv_opts).posterior.mean;
        const Vec mu_la = laplace_infer(lik, kernel, x, y, mv_opts).posterior.mean;
        const Vec mu_ep = ep_infer(lik, kernel, x, y, mv_opts).posterior.mean;
        cell_ta_la += (mu_la - mu_ta).mean();
        cell_la_ep += (mu_ep - mu_la).mean();
      }
      cell_ta_la /= trials;
      cell_la_ep /= trials;
      crit.expect(cell_ta_la > 0.0, "cell average mu_LA - mu_TA positive at phi=" +
                                        std::to_string(phis[pi]) + " kw=" +
                                        std::to_string(kws[wi]));
      crit.expect(cell_la_ep > 0.0, "cell average mu_EP - mu_LA positive at phi=" +
                                        std::to_string(phis[pi]) + " kw=" +
                                        std::to_string(kws[wi]));
      gap_ta_la_by_phi[pi] += cell_ta_la / kws.size();
      gap_la_ep_by_phi[pi] += cell_la_ep / kws.size();
    }
  }
  const double rho1 = oracles::spearman(phis, gap_ta_la_by_phi);
  const double rho2 = oracles::spearman(phis, gap_la_ep_by_phi);
  std::printf("  TA-LA gaps by phi:");
  for (double g : gap_ta_la_by_phi) std::printf(" %.4f", g);
  std::printf("  (spearman %.2f)\n", rho1);
  std::printf("  LA-EP gaps by phi:");
  for (double g : gap_la_ep_by_phi) std::printf(" %.4f", g);
  std::printf("  (spearman %.2f)\n", rho2);
  crit.expect(rho1 > 0.0, "TA-LA gap grows with dispersion");
  crit.expect(rho2 > 0.0, "LA-EP gap grows with dispersion");
}

namespace {

struct LayoutMetrics {
  Metrics taylor;
  Metrics ep;
};

// Three-region Gamma-shape layouts mirroring the two worked examples: an
// exponential mean trend, training points in three clusters, and test points
// jittered around training locations. Each layout fixes the configuration the
// figures describe -- the extremal-heavy layout draws its end-region test
// outputs above their conditional mean (the fit passes below them), while the
// middle-heavy layout draws its middle-region test outputs moderately below
// (the fit passes above them).
LayoutMetrics run_layout(std::uint64_t seed, const std::array<int, 3>& test_counts,
                         bool extremal) {
  std::mt19937_64 rng(seed);
  const double phi = 1.0;
  auto lik = make_likelihood("gamma_shape", phi);
  auto eta_of = [](double xx) { return 0.55 * xx - 1.0; };
  std::vector<double> xs;
  for (int r = 0; r < 3; ++r)
    for (int i = 0; i < 10; ++i) xs.push_back(2.0 * r + (i + 0.5) / 10.0);
  const int n = static_cast<int>(xs.size());
  Mat x(n, 1);
  Vec y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = xs[i];
    std::gamma_distribution<double> gd(1.0 / phi, std::exp(eta_of(xs[i])) * phi);
    y[i] = std::max(gd(rng), 1e-8);
  }

  std::uniform_real_distribution<double> jitter(-0.25, 0.25);
  std::vector<double> tx, ty;
  for (int r = 0; r < 3; ++r)
    for (int i = 0; i < test_counts[r]; ++i) {
      const int k = r * 10 + (i % 10);
      const double xx = std::clamp(xs[k] + jitter(rng), 0.0, 5.0);
      const double mean = std::exp(eta_of(xx));
      std::gamma_distribution<double> gd(1.0 / phi, mean * phi);
      double d = gd(rng);
      if (extremal && r != 1)
        for (int rep = 0; rep < 300 && d <= mean; ++rep) d = gd(rng);
      if (!extremal && r == 1)
        for (int rep = 0; rep < 300 && !(d > 0.45 * mean && d < 0.95 * mean); ++rep)
          d = gd(rng);
      tx.push_back(xx);
      ty.push_back(std::max(d, 1e-8));
    }
  const int m = static_cast<int>(tx.size());
  Mat xt(m, 1);
  Vec yt(m);
  for (int i = 0; i < m; ++i) {
    xt(i, 0) = tx[i];
    yt[i] = ty[i];
  }

  LayoutMetrics out;
  for (EngineId e : {EngineId::Taylor, EngineId::Ep}) {
    GgpmModel model;
    model.lik = lik;
    model.kernel = KernelSpec::rbf(0.5, 0.4);
    model.engine = e;
    model.x = x;
    model.y = y;
    InferOpts io;
    io.ep.tol = 1e-8;
    io.ep.max_sweeps = 120;
    io.want_gradients = false;
    const InferenceResult inf = infer(e, model.lik, model.kernel, model.x, model.y, io);
    Predictor pred(model, inf.posterior);
    std::vector<PredictiveDistribution> preds;
    for (int i = 0; i < m; ++i) preds.push_back(pred.at(xt.row(i)));
    const Metrics metrics = evaluate(preds, yt);
    if (e == EngineId::Taylor) out.taylor = metrics;
    else out.ep = metrics;
  }
  return out;
}

}  // namespace

TEST_CASE("criterion 5: two-layout error-sign analogue") {
  Criterion crit(5, "EP wins MAE on the extremal-heavy layout, Taylor on the middle-heavy "
                    "one, Taylor NLP never better on average");
  const int seeds = 6;
  double mae_gap_a = 0.0, mae_gap_b = 0.0, nlp_gap_a = 0.0, nlp_gap_b = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const LayoutMetrics a = run_layout(7000 + s, {40, 10, 40}, true);   // extremal-heavy
    const LayoutMetrics b = run_layout(8000 + s, {10, 70, 10}, false);  // middle-heavy
    mae_gap_a += a.taylor.mae - a.ep.mae;
    mae_gap_b += b.ep.mae - b.taylor.mae;
    nlp_gap_a += a.taylor.nlp - a.ep.nlp;
    nlp_gap_b += b.taylor.nlp - b.ep.nlp;
  }
  mae_gap_a /= seeds;
  mae_gap_b /= seeds;
  nlp_gap_a /= seeds;
  nlp_gap_b /= seeds;
  std::printf("  extremal-heavy: mean(MAE_TA - MAE_EP) = %+.4f, mean(NLP_TA - NLP_EP) = %+.4f\n",
              mae_gap_a, nlp_gap_a);
  std::printf("  middle-heavy:   mean(MAE_EP - MAE_TA) = %+.4f, mean(NLP_TA - NLP_EP) = %+.4f\n",
              mae_gap_b, nlp_gap_b);
  crit.expect(mae_gap_a > 0.0, "EP beats Taylor in MAE on the extremal-heavy layout");
  crit.expect(mae_gap_b > 0.0, "Taylor beats EP in MAE on the middle-heavy layout");
  crit.expect(nlp_gap_a >= 0.0, "Taylor NLP no better on the extremal-heavy layout");
  crit.expect(nlp_gap_b >= 0.0, "Taylor NLP no better on the middle-heavy layout");
}

TEST_CASE("criterion 6: single-site EP moments and the KLD bound against brute force") {
  Criterion crit(6, "n=1 EP moments within 1e-3 of 1e6-point integration; KLD bound never "
                    "exceeds the true marginal");
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> kv(0.4, 2.0);
  const std::vector<std::pair<std::string, double>> cases = {
      {"gamma_shape", 0.8}, {"gamma_scale", 0.9}, {"inv_gaussian", 0.5},
      {"poisson", 1.0},     {"beta", 0.6},        {"bernoulli_logit", 1.0}};
  const InferOpts opts = tight_opts();
  for (const auto& [id, phi] : cases) {
    for (int draw = 0; draw < 5; ++draw) {
      const double kval = kv(rng);
      auto lik = make_likelihood(id, phi);
      KernelSpec kernel = KernelSpec::rbf(0.5 * std::log(kval), 0.0);
      kernel.jitter_rel = 0.0;
      Mat x(1, 1);
      x << 0.0;
      std::normal_distribution<double> nd(0.0, std::sqrt(kval));
      Vec y(1);
      y << lik.sample(nd(rng), rng);
      const auto ref = oracles::tilted_bf(
          [&](double eta) { return lik.log_likelihood_raw(y[0], eta); }, 0.0, kval, 1000001);

      const InferenceResult ep = ep_infer(lik, kernel, x, y, opts);
      const double mean_err = std::abs(ep.posterior.mean[0] - ref.mean);
      const double var_err =
          std::abs(ep.posterior.cov(0, 0) - ref.var) / std::max(ref.var, 1e-3);
      crit.expect(mean_err < 1e-3, id + " EP mean err " + std::to_string(mean_err));
      crit.expect(var_err < 1e-3, id + " EP var rel err " + std::to_string(var_err));
      crit.expect(std::abs(ep.log_marginal - ref.log_z) < 1e-3,
                  id + " EP marginal vs brute force");

      const InferenceResult kld = kld_infer(lik, kernel, x, y, opts);
      crit.expect(kld.log_marginal <= ref.log_z + 1e-5,
                  id + " KLD bound exceeds the true marginal by " +
                      std::to_string(kld.log_marginal - ref.log_z));
    }
  }
}

TEST_CASE("criterion 7: COM-Poisson partition and its dispersion gradient") {
  Criterion crit(7, "log S(mu,1) = mu to 1e-10; dispersion gradient through the "
                    "phi-dependent partition passes FD");
  for (double mu : {0.5, 1.0, 2.0, 5.0})
    crit.expect(std::abs(com_poisson_log_partition(mu, 1.0) - mu) < 1e-10,
                "partition at nu=1, mu=" + std::to_string(mu));

  std::mt19937_64 rng(707);
  const Mat x = random_inputs(10, 1, rng);
  const KernelSpec kernel = KernelSpec::rbf(0.1, 0.15);
  auto gen = make_likelihood("com_poisson", 1.4, 1, 0.5);
  const Vec y = sample_dataset(gen, kernel, x, 7007).y;
  auto obj = [&](const Vec& h, Vec* g) -> double {
    auto lik = gen.with_dispersion(std::exp(h[0]));
    InferOpts opts;
    opts.want_gradients = (g != nullptr);
    const InferenceResult r = taylor_infer(lik, kernel, x, y, opts);
    if (g) (*g)[0] = -r.grad[2];
    return -r.log_marginal;
  };
  Vec h0(1);
  h0 << std::log(1.4);
  const GradCheckResult gc = check_gradient(obj, h0, 1e-5);
  std::printf("  com_poisson taylor dispersion gradient rel err %.2e\n", gc.max_rel_error);
  crit.expect(gc.max_rel_error < 1e-3, "dispersion gradient FD check");
}

TEST_CASE("criterion 8: taylor initialization matches full random multistart EP") {
  Criterion crit(8, "taylor_init reaches random-multistart EP quality with >=5x fewer EP "
                    "iterations and no convergence failures");
  long it_taylor_init = 0, it_random = 0;
  int failures = 0;
  double worst_gap = 0.0;
  for (int ds = 0; ds < 10; ++ds) {
    std::mt19937_64 rng(880 + ds);
    const Mat x = random_inputs(20, 1, rng, 0.0, 5.0);
    auto gen = make_likelihood("gamma_shape", 0.7);
    const KernelSpec gen_kernel = KernelSpec::rbf(0.2, 0.0);
    const Vec y = sample_dataset(gen, gen_kernel, x, 990 + ds).y;

    GgpmModel base;
    base.lik = make_likelihood("gamma_shape", 1.0);
    base.kernel = KernelSpec::rbf(0.0, 0.0);
    base.engine = EngineId::Ep;
    base.x = x;
    base.y = y;

    FitOpts opts;
    opts.n_random = 50;
    opts.top_k = 3;
    opts.seed = 1234 + ds;
    opts.optimizer.max_iter = 100;
    opts.optimizer.gtol = 1e-4;
    opts.infer.ep.tol = 1e-8;
    opts.infer.ep.max_sweeps = 150;

    GgpmModel m1 = base;
    const FitResult smart = fit(m1, FitStrategy::TaylorInit, opts);
    GgpmModel m2 = base;
    const FitResult brute = fit(m2, FitStrategy::RandomMultistart, opts);

    it_taylor_init += smart.target_iterations;
    it_random += brute.target_iterations;
    failures += smart.failures + brute.failures;
    const double gap = brute.candidates[brute.selected].log_marginal -
                       smart.candidates[smart.selected].log_marginal;
    worst_gap = std::max(worst_gap, gap);
  }
  std::printf("  EP optimizer iterations: taylor_init %ld vs random multistart %ld "
              "(ratio %.1fx), worst marginal gap %.4f, failures %d\n",
              it_taylor_init, it_random,
              static_cast<double>(it_random) / std::max<long>(1, it_taylor_init), worst_gap,
              failures);
  crit.expect(worst_gap < 0.1, "taylor_init marginal within 0.1 of the multistart best");
  crit.expect(it_random >= 5 * it_taylor_init, "at least 5x fewer EP iterations");
  crit.expect(failures == 0, "no EP convergence failures");
}

TEST_CASE("criterion 9: CLI byte-reproducibility under a fixed seed") {
  Criterion crit(9, "every CLI command writes byte-identical outputs across repeated runs");
  const std::string cli = GGPM_CLI_PATH;
  const std::string dir = "/tmp/ggpm_acceptance_cli";
  std::system(("rm -rf " + dir + " && mkdir -p " + dir).c_str());
  auto sh = [&](const std::string& args, const std::string& log) {
    const std::string cmd = cli + " " + args + " >" + dir + "/" + log + " 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  {
    std::ofstream cfg(dir + "/c.ini");
    cfg << "ggpm_config_version = 1\n[likelihood]\nid = neg_binomial\ndispersion = 0.6\n"
           "[kernel]\nkind = rbf\nlog_hyperparams = 0.1 0.0\n[engine]\nid = laplace\n"
           "[fit]\nstrategy = taylor_init\nn_random = 8\ntop_k = 2\nmax_iter = 60\n"
           "[run]\nseed = 99\n";
  }
  bool ok = true;
  for (int rep = 1; rep <= 2; ++rep) {
    const std::string t = dir + "/r" + std::to_string(rep) + "_";
    ok = ok && sh("sample --config " + dir + "/c.ini --grid lin:0:4:18 --out " + t + "d.csv",
                  "sample.log");
    ok = ok && sh("train --config " + dir + "/c.ini --data " + t + "d.csv --model " + t +
                      "m.model --out " + t + "rep.json",
                  "train.log");
    ok = ok && sh("predict --model " + t + "m.model --data " + t + "d.csv --out " + t + "p.csv",
                  "predict.log");
    ok = ok &&
         sh("eval --model " + t + "m.model --data " + t + "d.csv --out " + t + "e.json",
            "eval.log");
    ok = ok && sh("curve --model " + t + "m.model --grid lin:0:4:40 --out " + t + "cv.csv",
                  "curve.log");
    ok = ok && sh("compare --config " + dir + "/c.ini --data " + t + "d.csv --out " + t +
                      "cmp.csv",
                  "compare.log");
    ok = ok && sh("gradcheck --config " + dir + "/c.ini --data " + t + "d.csv", "gc" +
                      std::to_string(rep) + ".log");
  }
  crit.expect(ok, "all CLI invocations exited 0");
  for (const std::string f : {"d.csv", "m.model", "rep.json", "p.csv", "e.json", "cv.csv",
                              "cmp.csv"}) {
    crit.expect(slurp(dir + "/r1_" + f) == slurp(dir + "/r2_" + f),
                f + " byte-identical across runs");
  }
  crit.expect(slurp(dir + "/gc1.log") == slurp(dir + "/gc2.log"),
              "gradcheck output byte-identical");
}
