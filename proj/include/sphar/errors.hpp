#pragma once

#include <stdexcept>
#include <string>

namespace sphar {

/// Argument outside the mathematical domain of an operation (e.g. |z| > 1).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Model specification violating a structural condition
/// (stationarity margin, positive innovation spectrum, parameter ranges).
class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A linear system that should be positive definite is not
/// (rank-deficient design matrix, failed Cholesky, singular Yule-Walker).
class SingularError : public std::runtime_error {
 public:
  SingularError(const std::string& what, int ell = -1)
      : std::runtime_error(what), ell_(ell) {}

  /// Multipole the failure refers to, or -1 when not tied to one.
  int ell() const noexcept { return ell_; }

 private:
  int ell_;
};

}  // namespace sphar
