#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace ggpm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Base class for all recoverable numerical/validation failures.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainError : Error {
  explicit DomainError(const std::string& msg) : Error(msg) {}
};

// Raised when an internal exponential leaves the representable range even
// though the inputs were valid.
struct OverflowError : Error {
  explicit OverflowError(const std::string& msg) : Error(msg) {}
};

struct SingularCurvatureError : Error {
  explicit SingularCurvatureError(const std::string& msg) : Error(msg) {}
};

struct UndefinedPointError : Error {
  explicit UndefinedPointError(const std::string& msg) : Error(msg) {}
};

struct ConvergenceError : Error {
  explicit ConvergenceError(const std::string& msg) : Error(msg) {}
};

struct UnsupportedSamplerError : Error {
  explicit UnsupportedSamplerError(const std::string& msg) : Error(msg) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

struct NotPsdError : Error {
  explicit NotPsdError(const std::string& msg) : Error(msg) {}
};

struct NonFiniteError : Error {
  explicit NonFiniteError(const std::string& msg) : Error(msg) {}
};

struct NegativeCurvatureError : Error {
  NegativeCurvatureError(const std::string& msg, int idx) : Error(msg), index(idx) {}
  int index;
};

struct EmptyTestSetError : Error {
  explicit EmptyTestSetError(const std::string& msg) : Error(msg) {}
};

struct AllStartsFailedError : Error {
  explicit AllStartsFailedError(const std::string& msg) : Error(msg) {}
};

}  // namespace ggpm
