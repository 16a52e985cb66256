#include "ggpm/model.hpp"

#include <algorithm>
#include <cmath>

namespace ggpm {

Vec GgpmModel::pack_hyperparams() const {
  const int nk = kernel.n_hyperparams();
  Vec h(n_free_hyperparams());
  h.head(nk) = kernel.flat_log_hyperparams();
  if (lik.has_free_dispersion()) h[nk] = std::log(lik.dispersion());
  return h;
}

void GgpmModel::apply_hyperparams(const Vec& h) {
  const int nk = kernel.n_hyperparams();
  if (h.size() != n_free_hyperparams())
    throw DimensionError("hyperparameter vector has wrong length");
  kernel.set_flat_log_hyperparams(h.head(nk));
  if (lik.has_free_dispersion()) lik = lik.with_dispersion(std::exp(h[nk]));
}

void GgpmModel::validate_data() const {
  if (y.size() == 0) throw DomainError("model has no training data");
  if (x.rows() != y.size()) throw DimensionError("X/y row count mismatch");
  for (int i = 0; i < y.size(); ++i) lik.validate(y[i]);
}

FitStrategy fit_strategy_from_string(const std::string& s) {
  if (s == "taylor_init") return FitStrategy::TaylorInit;
  if (s == "random_multistart") return FitStrategy::RandomMultistart;
  if (s == "single") return FitStrategy::Single;
  throw DomainError("unknown fit strategy '" + s + "'");
}

std::string fit_strategy_to_string(FitStrategy s) {
  switch (s) {
    case FitStrategy::TaylorInit: return "taylor_init";
    case FitStrategy::RandomMultistart: return "random_multistart";
    case FitStrategy::Single: return "single";
  }
  return "";
}

namespace {

Objective engine_objective(const GgpmModel& model, EngineId engine, const InferOpts& opts,
                           double hyper_box) {
  return [&model, engine, opts, hyper_box](const Vec& h, Vec* g) -> double {
    if (h.lpNorm<Eigen::Infinity>() > hyper_box)
      return std::numeric_limits<double>::infinity();
    GgpmModel work = model;
    work.apply_hyperparams(h);
    InferOpts io = opts;
    io.want_gradients = (g != nullptr);
    const InferenceResult r = infer(engine, work.lik, work.kernel, work.x, work.y, io);
    if (g) {
      const int nk = model.kernel.n_hyperparams();
      g->resize(model.n_free_hyperparams());
      g->head(nk) = -r.grad.head(nk);
      if (model.lik.has_free_dispersion()) (*g)[nk] = -r.grad[nk];
    }
    return -r.log_marginal;
  };
}

OptimumRecord run_start(const GgpmModel& model, EngineId engine, const Vec& start,
                        const FitOpts& opts) {
  OptimumRecord rec;
  rec.start = start;
  try {
    const MinimizeResult mr = minimize(
        engine_objective(model, engine, opts.infer, opts.hyper_box), start, opts.optimizer);
    rec.converged = mr.x;
    rec.log_marginal = -mr.f;
    rec.iterations = mr.iterations;
    rec.optimizer_converged = (mr.status == MinimizeStatus::Converged);
    rec.ok = std::isfinite(rec.log_marginal);
  } catch (const Error& e) {
    rec.ok = false;
    rec.note = e.what();
  }
  return rec;
}

std::vector<int> dedup_top(const std::vector<OptimumRecord>& recs, double dist, int top_k) {
  std::vector<int> order;
  for (int i = 0; i < static_cast<int>(recs.size()); ++i)
    if (recs[i].ok) order.push_back(i);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return recs[a].log_marginal > recs[b].log_marginal; });
  std::vector<int> picked;
  for (int i : order) {
    bool dup = false;
    for (int j : picked)
      if ((recs[i].converged - recs[j].converged).norm() < dist) {
        dup = true;
        break;
      }
    if (!dup) picked.push_back(i);
    if (static_cast<int>(picked.size()) >= top_k) break;
  }
  return picked;
}

}  // namespace

FitResult fit(GgpmModel& model, FitStrategy strategy, const FitOpts& opts) {
  model.validate_data();
  FitResult out;
  const int dim = model.n_free_hyperparams();

  std::vector<Vec> final_starts;
  if (strategy == FitStrategy::Single) {
    final_starts.push_back(model.pack_hyperparams());
  } else {
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> ud(opts.start_lo, opts.start_hi);
    std::vector<Vec> starts(opts.n_random);
    for (auto& s : starts) {
      s.resize(dim);
      for (int j = 0; j < dim; ++j) s[j] = ud(rng);
    }
    if (strategy == FitStrategy::RandomMultistart) {
      final_starts.assign(starts.begin(), starts.end());
    } else {
      for (const Vec& s : starts) {
        out.taylor_stage.push_back(run_start(model, EngineId::Taylor, s, opts));
        if (!out.taylor_stage.back().ok) ++out.failures;
      }
      for (int i : dedup_top(out.taylor_stage, opts.dedup_dist, opts.top_k))
        final_starts.push_back(out.taylor_stage[i].converged);
      if (final_starts.empty())
        throw AllStartsFailedError("taylor initialization produced no usable optimum");
    }
  }

  for (const Vec& s : final_starts) {
    out.candidates.push_back(run_start(model, model.engine, s, opts));
    const OptimumRecord& rec = out.candidates.back();
    if (rec.ok) out.target_iterations += rec.iterations;
    else ++out.failures;
  }

  int best = -1;
  for (int pass = 0; pass < 2 && best < 0; ++pass) {
    for (int i = 0; i < static_cast<int>(out.candidates.size()); ++i) {
      const OptimumRecord& rec = out.candidates[i];
      if (!rec.ok) continue;
      if (pass == 0 && !rec.optimizer_converged) continue;
      if (best < 0 || rec.log_marginal > out.candidates[best].log_marginal) best = i;
    }
  }
  if (best < 0) throw AllStartsFailedError("no optimization start succeeded");

  out.selected = best;
  out.log_hyperparams = out.candidates[best].converged;
  model.apply_hyperparams(out.log_hyperparams);
  out.inference = infer(model.engine, model.lik, model.kernel, model.x, model.y, opts.infer);
  return out;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

Predictor::Predictor(const GgpmModel& model, const GaussianPosterior& posterior,
                     GaussianExpectationPlan plan)
    : model_(model), plan_(plan), lik_(std::make_shared<Likelihood>(model.lik)) {
  if (!posterior.common)
    throw DomainError("Predictor requires a posterior in common (W, t) form");
  k_ = gram(model.kernel, model.x);
  solver_ = std::make_unique<CommonSolver>(k_, posterior.common->site_prec);
  alpha_ = solver_->alpha(posterior.common->nu);
}

std::pair<double, double> Predictor::latent_at(const Vec& xstar) const {
  Mat xs(1, xstar.size());
  xs.row(0) = xstar;
  const Vec kstar = gram(model_.kernel, model_.x, xs).col(0);
  const double kss = kernel_value(model_.kernel, xstar, xstar);
  const double mu = kstar.dot(alpha_);
  const double var = kss - kstar.dot(solver_->solve_kw(kstar));
  return {mu, std::max(var, 1e-300)};
}

double PredictiveDistribution::log_density(double ystar) const {
  lik->validate(ystar);
  if (lik->id() == "gaussian") {
    const double v = latent_var + lik->dispersion();
    const double r = ystar - latent_mean;
    return -0.5 * std::log(2.0 * M_PI * v) - 0.5 * r * r / v;
  }
  const double sd = std::sqrt(latent_var);
  auto eval = [&](int order) {
    const QuadNodes& q = gauss_hermite(order);
    double acc = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < order; ++i) {
      const double eta = latent_mean + sd * q.x[i];
      acc = logsumexp2(acc, std::log(q.w[i]) + lik->log_likelihood_raw(ystar, eta));
    }
    return acc;
  };
  if (!plan.adaptive) return eval(plan.order);
  int order = plan.order;
  double prev = eval(order);
  while (true) {
    const int next = 2 * order + 1;
    if (next > plan.max_order) return prev;
    const double cur = eval(next);
    if (std::abs(cur - prev) <= plan.tol * std::max(1.0, std::abs(cur))) return cur;
    prev = cur;
    order = next;
  }
}

PredictiveDistribution Predictor::at(const Vec& xstar) const {
  PredictiveDistribution pd;
  pd.lik = lik_;
  pd.plan = plan_;
  std::tie(pd.latent_mean, pd.latent_var) = latent_at(xstar);
  pd.count_support = lik_->support().kind == SupportKind::Counts;

  if (lik_->id() == "gaussian") {
    pd.mean = pd.latent_mean;
    pd.variance = pd.latent_var + lik_->dispersion();
    pd.mode = pd.mean;
    return pd;
  }

  const double sd = std::sqrt(pd.latent_var);
  const QuadNodes& q = gauss_hermite(std::max(61, plan_.order));
  double m1 = 0.0, m2 = 0.0, vin = 0.0;
  for (int i = 0; i < q.x.size(); ++i) {
    const double eta = pd.latent_mean + sd * q.x[i];
    const double my = lik_->output_mean(eta);
    m1 += q.w[i] * my;
    m2 += q.w[i] * my * my;
    vin += q.w[i] * lik_->output_variance(eta);
  }
  pd.mean = m1;
  pd.variance = std::max(vin + m2 - m1 * m1, 0.0);
  pd.mode = pd.mean;
  if (pd.count_support) {
    const double s = std::sqrt(pd.variance);
    const long lo = std::max(0L, static_cast<long>(pd.mean - 10.0 * s - 3.0));
    const long hi = static_cast<long>(pd.mean + 10.0 * s + 3.0);
    double best = -std::numeric_limits<double>::infinity();
    for (long n = lo; n <= hi; ++n) {
      const double ld = pd.log_density(static_cast<double>(n));
      if (ld > best) {
        best = ld;
        pd.mode = static_cast<double>(n);
      }
    }
  }
  return pd;
}

Metrics evaluate(const std::vector<PredictiveDistribution>& predictions, const Vec& y) {
  if (y.size() == 0 || predictions.empty())
    throw EmptyTestSetError("evaluate: empty test set");
  if (static_cast<int>(predictions.size()) != y.size())
    throw DimensionError("evaluate: prediction/target length mismatch");
  Metrics m;
  for (int i = 0; i < y.size(); ++i) {
    const PredictiveDistribution& p = predictions[i];
    const double point = p.count_support ? p.mode : p.mean;
    m.mae += std::abs(point - y[i]);
    m.mse += (point - y[i]) * (point - y[i]);
    m.nlp -= p.log_density(y[i]);
  }
  const double n = static_cast<double>(y.size());
  m.mae /= n;
  m.mse /= n;
  m.nlp /= n;
  return m;
}

SampledDataset sample_dataset(const Likelihood& lik, const KernelSpec& kernel, const Mat& x,
                              std::uint64_t seed) {
  const int n = static_cast<int>(x.rows());
  const Mat k = gram(kernel, x);
  const PsdFactor f = psd_factor(k);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Vec z(n);
  for (int i = 0; i < n; ++i) z[i] = nd(rng);
  SampledDataset out;
  out.eta = f.chol_lower * z;
  out.y.resize(n);
  for (int i = 0; i < n; ++i) out.y[i] = lik.sample(out.eta[i], rng);
  return out;
}

}  // namespace ggpm
