#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ggpm/model.hpp"

namespace ggpm {

// CSV-backed dataset: feature columns, an optional "y" output column and an
// optional "eta" latent column (written by the sampler, ignored on input).
struct Dataset {
  Mat x;
  Vec y;
  bool has_y = false;
  Vec eta;
  bool has_eta = false;
  std::vector<std::string> feature_names;
  std::string path;
};

Dataset load_dataset_csv(const std::string& path);
void save_dataset_csv(const std::string& path, const Dataset& data);
// Throws DomainError naming the offending row when an output violates the
// likelihood support.
void validate_dataset(const Dataset& data, const Likelihood& lik);

// Sectioned key-value run configuration (see the README for the exact format).
struct RunConfig {
  // [likelihood]
  std::string likelihood_id = "gaussian";
  double dispersion = 1.0;
  int n_trials = 1;
  double offset = 0.5;
  bool clamp_unit_interval = false;
  // [kernel]
  std::string kernel_kind = "rbf";
  std::vector<double> kernel_log_hyperparams;
  double kernel_jitter = 1e-8;
  // [engine]
  std::string engine_id = "taylor";
  // [fit]
  std::string fit_strategy = "taylor_init";
  int n_random = 50;
  int top_k = 3;
  double dedup_dist = 0.05;
  double start_lo = -3.0;
  double start_hi = 3.0;
  int opt_max_iter = 200;
  double opt_gtol = 1e-5;
  // [numerics]
  int quad_order = 61;
  bool quad_adaptive = true;
  double quad_tol = 1e-10;
  double ep_tol = 1e-6;
  double ep_damping = 0.9;
  int ep_max_sweeps = 60;
  double newton_tol = 1e-8;
  int newton_max_iter = 100;
  double kld_gtol = 1e-7;
  int kld_max_iter = 1000;
  // [run]
  std::uint64_t seed = 0;
  bool seed_set = false;

  Likelihood make_lik() const;
  KernelSpec make_kernel() const;
  InferOpts make_infer_opts() const;
  FitOpts make_fit_opts() const;
};

RunConfig load_config(const std::string& path);

// Versioned self-describing model file: likelihood, kernel, hyperparameters,
// converged posterior in (W, t) form, and the training data.
struct ModelFile {
  RunConfig config;  // likelihood/kernel/engine/numerics blocks
  GgpmModel model;
  GaussianPosterior posterior;
  double log_marginal = 0.0;
};

void save_model(const std::string& path, const ModelFile& mf);
ModelFile load_model(const std::string& path);

// write-temp-then-rename
void atomic_write(const std::string& path, const std::string& content);
std::string format_double(double v);

}  // namespace ggpm
