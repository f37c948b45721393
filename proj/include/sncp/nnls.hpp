#pragma once

#include "sncp/tensor.hpp"

namespace sncp {

/// Nonnegative least squares in normal-equation form. Each row m of `rhs`
/// defines an independent problem
///
///   min_{x >= 0}  1/2 x^T G x - m^T x,
///
/// which is min ||C x - d||^2 / 2 with G = C^T C and m = C^T d. For a CP block
/// update G is the (regularized) Khatri-Rao gram and rhs is the MTTKRP.
struct NnlsProblem {
  Matrix gram;  ///< R x R, symmetric positive definite
  Matrix rhs;   ///< I x R, one right-hand side per row
};

inline constexpr double kDefaultNnlsTolerance = 1e-10;

/// Residuals of the KKT conditions of a returned solution, maximized over rows.
/// With g = G x - m:
///   primal         max(0, -x_i)
///   dual           max(0, -g_i) over x_i == 0
///   stationarity   |g_i|        over x_i > 0
///   complementarity|x_i g_i|
struct KktCertificate {
  double max_primal_violation = 0.0;
  double max_dual_violation = 0.0;
  double max_stationarity = 0.0;
  double max_complementarity = 0.0;
  /// max(1, max|m|, max|G| * max|x|); tolerances are applied relative to it.
  double scale = 1.0;
  /// Some row stopped at the iteration cap; its solution is the best found.
  bool iteration_cap_hit = false;

  [[nodiscard]] bool acceptable(double tol) const;
};

struct NnlsResult {
  Matrix solution;  ///< I x R, nonnegative
  KktCertificate certificate;
};

/// Lawson-Hanson active-set method applied row by row. Factorizations of the
/// passive-set subsystems are shared between rows.
[[nodiscard]] NnlsResult nnls_active_set(const NnlsProblem& p, double tol = kDefaultNnlsTolerance);
/// Same, trying the support of `initial` (I x R) first for every row.
[[nodiscard]] NnlsResult nnls_active_set(const NnlsProblem& p, double tol, const Matrix& initial);

/// Block principal pivoting with the three-strike full-exchange rule and
/// single-variable backup. All rows are solved together; rows that share a
/// passive set share one Cholesky factorization.
[[nodiscard]] NnlsResult nnls_block_principal_pivoting(const NnlsProblem& p, double tol = kDefaultNnlsTolerance);
[[nodiscard]] NnlsResult nnls_block_principal_pivoting(const NnlsProblem& p, double tol, const Matrix& initial);

[[nodiscard]] KktCertificate kkt_certificate(const Matrix& gram, const Matrix& rhs, const Matrix& solution);

/// Throws ShapeError/DataError/IllConditionedError when `p` violates the
/// problem invariants (square symmetric positive definite gram).
void validate(const NnlsProblem& p);

}  // namespace sncp
