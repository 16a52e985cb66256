#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ggpm/inference.hpp"

namespace ggpm {

struct GgpmModel {
  Likelihood lik = make_likelihood("gaussian");
  KernelSpec kernel;
  EngineId engine = EngineId::Taylor;
  Mat x;
  Vec y;

  int n_free_hyperparams() const {
    return kernel.n_hyperparams() + (lik.has_free_dispersion() ? 1 : 0);
  }
  Vec pack_hyperparams() const;
  void apply_hyperparams(const Vec& h);
  void validate_data() const;
};

enum class FitStrategy { TaylorInit, RandomMultistart, Single };
FitStrategy fit_strategy_from_string(const std::string& s);
std::string fit_strategy_to_string(FitStrategy s);

struct OptimumRecord {
  Vec start;
  Vec converged;
  double log_marginal = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool ok = false;
  bool optimizer_converged = false;
  std::string note;
};

struct FitOpts {
  int n_random = 50;
  int top_k = 3;
  double dedup_dist = 0.05;
  double start_lo = -3.0;
  double start_hi = 3.0;
  // search box for log-hyperparameters; outside it the objective reports
  // +inf so line searches back off before the likelihood terms lose precision
  double hyper_box = 12.0;
  std::uint64_t seed = 0;
  MinimizeOpts optimizer{200, 1e-5, 1.0, 40, true};
  InferOpts infer;
};

struct FitResult {
  Vec log_hyperparams;
  InferenceResult inference;
  std::vector<OptimumRecord> taylor_stage;
  std::vector<OptimumRecord> candidates;  // target-engine stage
  int selected = -1;
  long target_iterations = 0;  // optimizer iterations spent in the target stage
  int failures = 0;
};

FitResult fit(GgpmModel& model, FitStrategy strategy, const FitOpts& opts = {});

// Output-space predictive distribution at one test input.
struct PredictiveDistribution {
  double latent_mean = 0.0;
  double latent_var = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  double mode = 0.0;  // pmf mode on count supports, mean otherwise
  bool count_support = false;

  double log_density(double ystar) const;

  // evaluation context
  std::shared_ptr<const Likelihood> lik;
  GaussianExpectationPlan plan;
};

// Factors the training system once and serves per-point predictions.
class Predictor {
 public:
  Predictor(const GgpmModel& model, const GaussianPosterior& posterior,
            GaussianExpectationPlan plan = {61, true, 1e-9, 2049});

  PredictiveDistribution at(const Vec& xstar) const;
  std::pair<double, double> latent_at(const Vec& xstar) const;

 private:
  const GgpmModel& model_;
  GaussianExpectationPlan plan_;
  Mat k_;
  std::unique_ptr<CommonSolver> solver_;
  Vec alpha_;
  std::shared_ptr<const Likelihood> lik_;
};

struct Metrics {
  double mae = 0.0;
  double mse = 0.0;
  double nlp = 0.0;
};

Metrics evaluate(const std::vector<PredictiveDistribution>& predictions, const Vec& y);

struct SampledDataset {
  Vec y;
  Vec eta;
};
SampledDataset sample_dataset(const Likelihood& lik, const KernelSpec& kernel, const Mat& x,
                              std::uint64_t seed);

}  // namespace ggpm
