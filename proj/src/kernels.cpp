#include "ggpm/kernels.hpp"

#include <cmath>
#include <functional>

namespace ggpm {

KernelSpec KernelSpec::rbf(double log_scale, double log_bandwidth) {
  KernelSpec k;
  k.kind = Kind::Rbf;
  k.log_hyperparams.resize(2);
  k.log_hyperparams << log_scale, log_bandwidth;
  return k;
}

KernelSpec KernelSpec::linear(double log_scale) {
  KernelSpec k;
  k.kind = Kind::Linear;
  k.log_hyperparams.resize(1);
  k.log_hyperparams << log_scale;
  return k;
}

KernelSpec KernelSpec::sum(std::vector<KernelSpec> parts) {
  KernelSpec k;
  k.kind = Kind::Sum;
  k.parts = std::move(parts);
  return k;
}

KernelSpec KernelSpec::parse(const std::string& text) {
  std::vector<KernelSpec> parts;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t next = text.find('+', pos);
    const std::string term = text.substr(pos, next == std::string::npos ? next : next - pos);
    if (term == "rbf") parts.push_back(rbf());
    else if (term == "linear") parts.push_back(linear());
    else throw DomainError("unknown kernel term '" + term + "'");
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  if (parts.empty()) throw DomainError("empty kernel spec");
  if (parts.size() == 1) return parts[0];
  return sum(std::move(parts));
}

int KernelSpec::n_hyperparams() const {
  if (kind != Kind::Sum) return static_cast<int>(log_hyperparams.size());
  int n = 0;
  for (const auto& p : parts) n += p.n_hyperparams();
  return n;
}

Vec KernelSpec::flat_log_hyperparams() const {
  if (kind != Kind::Sum) return log_hyperparams;
  Vec h(n_hyperparams());
  int at = 0;
  for (const auto& p : parts) {
    const Vec hp = p.flat_log_hyperparams();
    h.segment(at, hp.size()) = hp;
    at += static_cast<int>(hp.size());
  }
  return h;
}

void KernelSpec::set_flat_log_hyperparams(const Vec& h) {
  if (h.size() != n_hyperparams())
    throw DimensionError("kernel hyperparameter count mismatch");
  if (kind != Kind::Sum) {
    log_hyperparams = h;
    return;
  }
  int at = 0;
  for (auto& p : parts) {
    const int np = p.n_hyperparams();
    p.set_flat_log_hyperparams(h.segment(at, np));
    at += np;
  }
}

std::string KernelSpec::describe() const {
  switch (kind) {
    case Kind::Rbf: return "rbf";
    case Kind::Linear: return "linear";
    case Kind::Sum: {
      std::string s;
      for (size_t i = 0; i < parts.size(); ++i) {
        if (i) s += "+";
        s += parts[i].describe();
      }
      return s;
    }
  }
  return "";
}

namespace {

void check_dims(const Mat& x, const Mat& x2) {
  if (x.cols() != x2.cols())
    throw DimensionError("kernel input dimension mismatch: " + std::to_string(x.cols()) +
                         " vs " + std::to_string(x2.cols()));
}

Mat sq_dists(const Mat& x, const Mat& x2) {
  const Vec nx = x.rowwise().squaredNorm();
  const Vec n2 = x2.rowwise().squaredNorm();
  Mat d = -2.0 * x * x2.transpose();
  d.colwise() += nx;
  d.rowwise() += n2.transpose();
  return d.cwiseMax(0.0);
}

}  // namespace

Mat gram(const KernelSpec& kernel, const Mat& x, const Mat& x2) {
  check_dims(x, x2);
  switch (kernel.kind) {
    case KernelSpec::Kind::Rbf: {
      const double s2 = std::exp(2.0 * kernel.log_hyperparams[0]);
      const double ell2 = std::exp(2.0 * kernel.log_hyperparams[1]);
      return s2 * (-sq_dists(x, x2) / (2.0 * ell2)).array().exp().matrix();
    }
    case KernelSpec::Kind::Linear: {
      const double s2 = std::exp(2.0 * kernel.log_hyperparams[0]);
      return s2 * x * x2.transpose();
    }
    case KernelSpec::Kind::Sum: {
      Mat k = Mat::Zero(x.rows(), x2.rows());
      for (const auto& p : kernel.parts) k += gram(p, x, x2);
      return k;
    }
  }
  throw Error("unreachable kernel kind");
}

Mat gram(const KernelSpec& kernel, const Mat& x) {
  Mat k = gram(kernel, x, x);
  // jitter scales with each leaf's signal variance
  std::function<double(const KernelSpec&)> jit = [&](const KernelSpec& ks) -> double {
    if (ks.kind == KernelSpec::Kind::Sum) {
      double j = 0.0;
      for (const auto& p : ks.parts) j += jit(p);
      return j;
    }
    return ks.jitter_rel * std::exp(2.0 * ks.log_hyperparams[0]);
  };
  k.diagonal().array() += jit(kernel);
  return k;
}

double kernel_value(const KernelSpec& kernel, const Vec& a, const Vec& b) {
  Mat xa(1, a.size()), xb(1, b.size());
  xa.row(0) = a;
  xb.row(0) = b;
  return gram(kernel, xa, xb)(0, 0);
}

std::vector<Mat> gram_gradients(const KernelSpec& kernel, const Mat& x) {
  switch (kernel.kind) {
    case KernelSpec::Kind::Rbf: {
      const double s2 = std::exp(2.0 * kernel.log_hyperparams[0]);
      const double ell2 = std::exp(2.0 * kernel.log_hyperparams[1]);
      const Mat d2 = sq_dists(x, x);
      Mat k = s2 * (-d2 / (2.0 * ell2)).array().exp().matrix();
      k.diagonal().array() += kernel.jitter_rel * s2;
      std::vector<Mat> grads;
      grads.push_back(2.0 * k);                                  // d/d log s
      grads.push_back(k.cwiseProduct(d2) / ell2);                // d/d log ell
      return grads;
    }
    case KernelSpec::Kind::Linear: {
      const double s2 = std::exp(2.0 * kernel.log_hyperparams[0]);
      Mat k = s2 * x * x.transpose();
      k.diagonal().array() += kernel.jitter_rel * s2;
      return {2.0 * k};
    }
    case KernelSpec::Kind::Sum: {
      std::vector<Mat> grads;
      for (const auto& p : kernel.parts) {
        auto g = gram_gradients(p, x);
        grads.insert(grads.end(), std::make_move_iterator(g.begin()),
                     std::make_move_iterator(g.end()));
      }
      return grads;
    }
  }
  throw Error("unreachable kernel kind");
}

}  // namespace ggpm
