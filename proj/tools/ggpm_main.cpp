#include <CLI11.hpp>
#include <chrono>
#include <iostream>
#include <json.hpp>

#include "ggpm/io.hpp"
#include "ggpm/model.hpp"

using namespace ggpm;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

int classify_error(const Error& e) {
  if (dynamic_cast<const DomainError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
      dynamic_cast<const EmptyTestSetError*>(&e) ||
      dynamic_cast<const UndefinedPointError*>(&e))
    return kExitValidation;
  return kExitNumerical;
}

struct CommonArgs {
  std::string config_path, data_path, model_path, out_path, test_path, grid, engine;
  long long seed = -1;
  int ygrid = 120;
};

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

RunConfig load_run_config(const CommonArgs& a) {
  RunConfig cfg = load_config(a.config_path);
  if (!a.engine.empty()) cfg.engine_id = a.engine;
  if (a.seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(a.seed);
    cfg.seed_set = true;
  }
  if (!cfg.seed_set)
    throw DomainError(a.config_path + ": seed is required ([run] seed = ... or --seed)");
  return cfg;
}

Dataset load_and_validate(const std::string& path, const RunConfig& cfg, const Likelihood& lik) {
  Dataset d = load_dataset_csv(path);
  if (cfg.clamp_unit_interval && lik.support().kind == SupportKind::UnitInterval && d.has_y)
    for (int i = 0; i < d.y.size(); ++i) d.y[i] = std::clamp(d.y[i], 1e-6, 1.0 - 1e-6);
  validate_dataset(d, lik);
  return d;
}

json optima_json(const std::vector<OptimumRecord>& recs) {
  json arr = json::array();
  for (const auto& r : recs) {
    json j;
    j["ok"] = r.ok;
    j["log_marginal"] = r.log_marginal;
    j["iterations"] = r.iterations;
    j["optimizer_converged"] = r.optimizer_converged;
    if (!r.note.empty()) j["note"] = r.note;
    if (r.start.size()) j["start"] = std::vector<double>(r.start.data(), r.start.data() + r.start.size());
    if (r.converged.size())
      j["converged"] = std::vector<double>(r.converged.data(), r.converged.data() + r.converged.size());
    arr.push_back(j);
  }
  return arr;
}

int cmd_train(const CommonArgs& a) {
  const double t0 = now_ms();
  const RunConfig cfg = load_run_config(a);
  GgpmModel model;
  model.lik = cfg.make_lik();
  model.kernel = cfg.make_kernel();
  model.engine = engine_from_string(cfg.engine_id);
  const Dataset data = load_and_validate(a.data_path, cfg, model.lik);
  model.x = data.x;
  model.y = data.y;

  const FitOpts fopts = cfg.make_fit_opts();
  FitResult fr = fit(model, fit_strategy_from_string(cfg.fit_strategy), fopts);

  ModelFile mf;
  mf.config = cfg;
  mf.model = model;
  mf.posterior = fr.inference.posterior;
  mf.log_marginal = fr.inference.log_marginal;
  save_model(a.model_path, mf);

  json report;
  report["command"] = "train";
  report["likelihood"] = model.lik.id();
  report["kernel"] = model.kernel.describe();
  report["engine"] = engine_to_string(model.engine);
  report["strategy"] = cfg.fit_strategy;
  report["seed"] = cfg.seed;
  report["log_marginal"] = fr.inference.log_marginal;
  report["log_hyperparams"] =
      std::vector<double>(fr.log_hyperparams.data(),
                          fr.log_hyperparams.data() + fr.log_hyperparams.size());
  report["selected"] = fr.selected;
  report["target_iterations"] = fr.target_iterations;
  report["failures"] = fr.failures;
  report["candidates"] = optima_json(fr.candidates);
  if (!fr.taylor_stage.empty()) report["taylor_stage_size"] = fr.taylor_stage.size();
  if (!a.out_path.empty()) atomic_write(a.out_path, report.dump(2) + "\n");
  std::cout << "trained " << model.lik.id() << "/" << engine_to_string(model.engine)
            << ": log marginal " << fr.inference.log_marginal << ", model -> " << a.model_path
            << " (" << (now_ms() - t0) << " ms)\n";
  return 0;
}

std::vector<PredictiveDistribution> run_predictions(const ModelFile& mf, const Dataset& data) {
  if (data.x.cols() != mf.model.x.cols())
    throw DimensionError(data.path + ": input dimension " + std::to_string(data.x.cols()) +
                         " does not match model dimension " + std::to_string(mf.model.x.cols()));
  GaussianExpectationPlan plan{mf.config.quad_order, mf.config.quad_adaptive,
                               std::max(mf.config.quad_tol, 1e-10), 2049};
  Predictor pred(mf.model, mf.posterior, plan);
  std::vector<PredictiveDistribution> out;
  out.reserve(data.x.rows());
  for (int i = 0; i < data.x.rows(); ++i) out.push_back(pred.at(data.x.row(i)));
  return out;
}

int cmd_predict(const CommonArgs& a) {
  const ModelFile mf = load_model(a.model_path);
  const Dataset data = load_dataset_csv(a.data_path);
  if (data.x.rows() == 0) throw EmptyTestSetError(a.data_path + ": no rows");
  const auto preds = run_predictions(mf, data);
  const bool counts = preds[0].count_support;

  std::ostringstream out;
  for (int j = 0; j < data.x.cols(); ++j) out << (j ? "," : "") << "x" << j;
  out << ",pred_mean";
  if (counts) out << ",pred_mode";
  out << ",pred_var,latent_mean,latent_var";
  if (data.has_y) out << ",nlp_contrib";
  out << "\n";
  for (int i = 0; i < data.x.rows(); ++i) {
    for (int j = 0; j < data.x.cols(); ++j) out << (j ? "," : "") << format_double(data.x(i, j));
    out << "," << format_double(preds[i].mean);
    if (counts) out << "," << format_double(preds[i].mode);
    out << "," << format_double(preds[i].variance) << "," << format_double(preds[i].latent_mean)
        << "," << format_double(preds[i].latent_var);
    if (data.has_y) out << "," << format_double(preds[i].log_density(data.y[i]));
    out << "\n";
  }
  atomic_write(a.out_path, out.str());
  std::cout << "wrote " << data.x.rows() << " predictions -> " << a.out_path << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& a) {
  const ModelFile mf = load_model(a.model_path);
  const Dataset data = load_dataset_csv(a.data_path);
  if (data.x.rows() == 0 || !data.has_y)
    throw EmptyTestSetError(a.data_path + ": evaluation needs a nonempty dataset with 'y'");
  validate_dataset(data, mf.model.lik);
  const auto preds = run_predictions(mf, data);
  const Metrics m = evaluate(preds, data.y);
  json out;
  out["MAE"] = m.mae;
  out["MSE"] = m.mse;
  out["NLP"] = m.nlp;
  out["n"] = data.y.size();
  atomic_write(a.out_path, out.dump(2) + "\n");
  std::cout << "MAE " << m.mae << "  MSE " << m.mse << "  NLP " << m.nlp << " -> " << a.out_path
            << "\n";
  return 0;
}

Mat parse_grid(const std::string& spec, std::uint64_t seed) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : spec) {
    if (c == ':') {
      parts.push_back(cur);
      cur.clear();
    } else cur += c;
  }
  parts.push_back(cur);
  auto num = [&](size_t i) { return std::stod(parts.at(i)); };
  if (parts[0] == "lin" && parts.size() == 4) {
    const int n = static_cast<int>(num(3));
    if (n < 2) throw DomainError("grid needs at least 2 points");
    Mat x(n, 1);
    x.col(0) = Vec::LinSpaced(n, num(1), num(2));
    return x;
  }
  if (parts[0] == "rand" && parts.size() == 5) {
    const int n = static_cast<int>(num(1)), d = static_cast<int>(num(2));
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> ud(num(3), num(4));
    Mat x(n, d);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = ud(rng);
    return x;
  }
  throw DomainError("invalid grid spec '" + spec + "' (use lin:min:max:n or rand:n:d:lo:hi)");
}

int cmd_sample(const CommonArgs& a) {
  const RunConfig cfg = load_run_config(a);
  const Likelihood lik = cfg.make_lik();
  const KernelSpec kernel = cfg.make_kernel();
  Mat x;
  if (!a.grid.empty()) x = parse_grid(a.grid, cfg.seed);
  else if (!a.data_path.empty()) x = load_dataset_csv(a.data_path).x;
  else throw DomainError("sample needs --grid or --data");

  const SampledDataset s = sample_dataset(lik, kernel, x, cfg.seed);
  Dataset d;
  d.x = x;
  d.y = s.y;
  d.has_y = true;
  d.eta = s.eta;
  d.has_eta = true;
  for (int j = 0; j < x.cols(); ++j) d.feature_names.push_back("x" + std::to_string(j));
  save_dataset_csv(a.out_path, d);
  std::cout << "sampled " << x.rows() << " rows from " << lik.id() << " -> " << a.out_path
            << "\n";
  return 0;
}

int cmd_compare(const CommonArgs& a) {
  const RunConfig cfg = load_run_config(a);
  GgpmModel base;
  base.lik = cfg.make_lik();
  base.kernel = cfg.make_kernel();
  const Dataset train = load_and_validate(a.data_path, cfg, base.lik);
  base.x = train.x;
  base.y = train.y;
  Dataset test = train;
  if (!a.test_path.empty()) test = load_and_validate(a.test_path, cfg, base.lik);

  struct Row {
    std::string engine;
    bool ok = false;
    double log_marginal = 0, mae = 0, mse = 0, nlp = 0, wall_ms = 0;
    long iterations = 0;
    std::string note;
  };
  std::vector<Row> rows;
  const FitOpts fopts = cfg.make_fit_opts();
  for (const std::string eng : {"taylor", "laplace", "ep", "kld"}) {
    Row row;
    row.engine = eng;
    const double t0 = now_ms();
    try {
      GgpmModel model = base;
      model.engine = engine_from_string(eng);
      // identical seed -> identical Taylor-stage candidates across engines
      FitResult fr = fit(model, fit_strategy_from_string(cfg.fit_strategy), fopts);
      GaussianExpectationPlan plan{cfg.quad_order, cfg.quad_adaptive,
                                   std::max(cfg.quad_tol, 1e-10), 2049};
      Predictor pred(model, fr.inference.posterior, plan);
      std::vector<PredictiveDistribution> preds;
      for (int i = 0; i < test.x.rows(); ++i) preds.push_back(pred.at(test.x.row(i)));
      const Metrics m = evaluate(preds, test.y);
      row.ok = true;
      row.log_marginal = fr.inference.log_marginal;
      row.mae = m.mae;
      row.mse = m.mse;
      row.nlp = m.nlp;
      row.iterations = fr.target_iterations;
    } catch (const Error& e) {
      row.note = e.what();
    }
    row.wall_ms = now_ms() - t0;
    rows.push_back(row);
  }

  int n_ok = 0;
  std::ostringstream csv;
  csv << "engine,ok,log_marginal,MAE,MSE,NLP,iterations,note\n";
  std::printf("%-8s %12s %10s %10s %10s %8s %10s\n", "engine", "log_marg", "MAE", "MSE", "NLP",
              "iters", "wall_ms");
  for (const Row& r : rows) {
    if (r.ok) {
      ++n_ok;
      std::printf("%-8s %12.5f %10.5f %10.5f %10.5f %8ld %10.1f\n", r.engine.c_str(),
                  r.log_marginal, r.mae, r.mse, r.nlp, r.iterations, r.wall_ms);
      csv << r.engine << ",1," << format_double(r.log_marginal) << "," << format_double(r.mae)
          << "," << format_double(r.mse) << "," << format_double(r.nlp) << "," << r.iterations
          << ",\n";
    } else {
      std::printf("%-8s FAILED: %s\n", r.engine.c_str(), r.note.c_str());
      csv << r.engine << ",0,,,,,," << r.note << "\n";
    }
  }
  if (!a.out_path.empty()) atomic_write(a.out_path, csv.str());
  return n_ok > 0 ? 0 : kExitNumerical;
}

int cmd_curve(const CommonArgs& a) {
  const ModelFile mf = load_model(a.model_path);
  if (mf.model.x.cols() != 1)
    throw DomainError("curve requires a 1-D input model (got d=" +
                      std::to_string(mf.model.x.cols()) + ")");
  const Mat grid = parse_grid(a.grid.empty() ? "lin:0:1:100" : a.grid, 0);
  GaussianExpectationPlan plan{mf.config.quad_order, mf.config.quad_adaptive,
                               std::max(mf.config.quad_tol, 1e-10), 2049};
  Predictor pred(mf.model, mf.posterior, plan);
  std::vector<PredictiveDistribution> preds;
  for (int i = 0; i < grid.rows(); ++i) preds.push_back(pred.at(grid.row(i)));

  // y-grid covering the predictive mass along the whole curve
  const Support& sup = mf.model.lik.support();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& p : preds) {
    const double s = std::sqrt(std::max(p.variance, 1e-12));
    lo = std::min(lo, p.mean - 8.0 * s);
    hi = std::max(hi, p.mean + 8.0 * s);
  }
  std::vector<double> ys;
  bool discrete = false;
  if (sup.kind == SupportKind::Counts) {
    discrete = true;
    for (long v = 0; v <= static_cast<long>(std::max(hi, 1.0)) + 1; ++v)
      ys.push_back(static_cast<double>(v));
  } else if (sup.kind == SupportKind::Fractions) {
    discrete = true;
    for (int k = 0; k <= sup.n_trials; ++k) ys.push_back(static_cast<double>(k) / sup.n_trials);
  } else {
    if (sup.kind == SupportKind::PositiveReals) lo = std::max(lo, 1e-9);
    if (sup.kind == SupportKind::UnitInterval) {
      lo = 1e-6;
      hi = 1.0 - 1e-6;
    }
    const int ny = std::max(a.ygrid, 10);
    for (int k = 0; k < ny; ++k)
      ys.push_back(lo + (hi - lo) * (k + 0.5) / static_cast<double>(ny));
  }

  std::ostringstream out;
  out << "x,latent_mean,latent_sd,output_mean";
  for (double yv : ys) out << ",dens_" << format_double(yv);
  out << "\n";
  for (int i = 0; i < grid.rows(); ++i) {
    const auto& p = preds[i];
    out << format_double(grid(i, 0)) << "," << format_double(p.latent_mean) << ","
        << format_double(std::sqrt(p.latent_var)) << "," << format_double(p.mean);
    for (double yv : ys) out << "," << format_double(std::exp(p.log_density(yv)));
    out << "\n";
  }
  atomic_write(a.out_path, out.str());
  std::cout << "wrote curve with " << grid.rows() << " x " << ys.size()
            << (discrete ? " pmf" : " density") << " values -> " << a.out_path << "\n";
  return 0;
}

int cmd_gradcheck(const CommonArgs& a) {
  const RunConfig cfg = load_run_config(a);
  GgpmModel model;
  model.lik = cfg.make_lik();
  model.kernel = cfg.make_kernel();
  model.engine = engine_from_string(cfg.engine_id);
  const Dataset data = load_and_validate(a.data_path, cfg, model.lik);
  model.x = data.x;
  model.y = data.y;
  const InferOpts iopts = cfg.make_infer_opts();

  auto obj = [&](const Vec& h, Vec* g) -> double {
    GgpmModel work = model;
    work.apply_hyperparams(h);
    InferOpts io = iopts;
    io.want_gradients = (g != nullptr);
    const InferenceResult r = infer(model.engine, work.lik, work.kernel, work.x, work.y, io);
    if (g) {
      const int nk = model.kernel.n_hyperparams();
      g->resize(model.n_free_hyperparams());
      g->head(nk) = -r.grad.head(nk);
      if (model.lik.has_free_dispersion()) (*g)[nk] = -r.grad[nk];
    }
    return -r.log_marginal;
  };
  const double step = (model.engine == EngineId::Taylor || model.engine == EngineId::Laplace)
                          ? 1e-5
                          : 1e-4;
  const GradCheckResult gc = check_gradient(obj, model.pack_hyperparams(), step);
  std::printf("gradcheck %s/%s at the configured hyperparameters:\n", model.lik.id().c_str(),
              engine_to_string(model.engine).c_str());
  for (int i = 0; i < gc.analytic.size(); ++i)
    std::printf("  coord %d: analytic %+.8e  numeric %+.8e  rel %.3e\n", i, gc.analytic[i],
                gc.numeric[i], gc.rel_errors[i]);
  std::printf("max relative error: %.3e\n", gc.max_rel_error);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"generalized Gaussian process models: batch training, prediction and evaluation"};
  app.require_subcommand(1);
  CommonArgs a;

  auto add_common = [&](CLI::App* sub, bool config, bool data, bool model, bool out) {
    if (config) sub->add_option("--config", a.config_path, "run configuration file")->required();
    if (data) sub->add_option("--data", a.data_path, "CSV dataset");
    if (model) sub->add_option("--model", a.model_path, "model file")->required();
    if (out) sub->add_option("--out", a.out_path, "output path");
    sub->add_option("--seed", a.seed, "seed override");
    return sub;
  };

  auto* train = add_common(app.add_subcommand("train", "fit a model"), true, true, true, true);
  train->add_option("--engine", a.engine, "engine override: taylor|laplace|ep|kld");
  auto* predict =
      add_common(app.add_subcommand("predict", "predict at new inputs"), false, true, true, true);
  auto* eval =
      add_common(app.add_subcommand("eval", "evaluate MAE/MSE/NLP"), false, true, true, true);
  auto* sample = add_common(app.add_subcommand("sample", "draw a synthetic dataset"), true, true,
                            false, true);
  sample->add_option("--grid", a.grid, "lin:min:max:n or rand:n:d:lo:hi");
  auto* compare = add_common(app.add_subcommand("compare", "run all four engines"), true, true,
                             false, true);
  compare->add_option("--test", a.test_path, "separate evaluation CSV");
  auto* curve =
      add_common(app.add_subcommand("curve", "1-D curve/density export"), false, false, true, true);
  curve->add_option("--grid", a.grid, "lin:min:max:n");
  curve->add_option("--ygrid", a.ygrid, "number of density grid points");
  auto* gradcheck = add_common(app.add_subcommand("gradcheck", "finite-difference gradient check"),
                               true, true, false, false);
  gradcheck->add_option("--engine", a.engine, "engine override");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(a);
    if (predict->parsed()) return cmd_predict(a);
    if (eval->parsed()) return cmd_eval(a);
    if (sample->parsed()) return cmd_sample(a);
    if (compare->parsed()) return cmd_compare(a);
    if (curve->parsed()) return cmd_curve(a);
    if (gradcheck->parsed()) return cmd_gradcheck(a);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return classify_error(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return 0;
}
