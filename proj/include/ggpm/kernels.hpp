#pragma once

#include <string>
#include <vector>

#include "ggpm/common.hpp"

namespace ggpm {

// Covariance function over real-vector inputs. Hyperparameters live in
// log-space: rbf -> (log scale, log bandwidth), linear -> (log scale).
// Sum kernels concatenate their parts' hyperparameter vectors in order.
struct KernelSpec {
  enum class Kind { Rbf, Linear, Sum };

  Kind kind = Kind::Rbf;
  Vec log_hyperparams;
  double jitter_rel = 1e-8;  // added to the diagonal as jitter_rel * scale^2
  std::vector<KernelSpec> parts;

  static KernelSpec rbf(double log_scale = 0.0, double log_bandwidth = 0.0);
  static KernelSpec linear(double log_scale = 0.0);
  static KernelSpec sum(std::vector<KernelSpec> parts);
  // "rbf", "linear", or '+'-joined terms such as "linear+rbf"
  static KernelSpec parse(const std::string& text);

  int n_hyperparams() const;
  Vec flat_log_hyperparams() const;
  void set_flat_log_hyperparams(const Vec& h);
  std::string describe() const;
};

// K(X, X) with jitter on the diagonal. Rows of x are input points.
Mat gram(const KernelSpec& kernel, const Mat& x);
// K(X, X2), no jitter.
Mat gram(const KernelSpec& kernel, const Mat& x, const Mat& x2);
double kernel_value(const KernelSpec& kernel, const Vec& a, const Vec& b);

// Entry-wise dK/d(log alpha_j) on the training gram (including the jitter
// term where it scales with the hyperparameter), one matrix per
// log-hyperparameter in flat order.
std::vector<Mat> gram_gradients(const KernelSpec& kernel, const Mat& x);

}  // namespace ggpm
