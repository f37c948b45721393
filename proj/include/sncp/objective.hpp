#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>

#include "sncp/config.hpp"
#include "sncp/tensor.hpp"

namespace sncp {

/// One row per completed sweep.
struct IterationTrace {
  std::size_t iter = 0;
  /// Penalized objective of the method (squared-l1 rows for ANLS, l1 columns otherwise).
  double objective = 0.0;
  /// 1/2 ||X - [[A]]||_F^2
  double ncp_objective = 0.0;
  double rel_err = 0.0;
  double fit = 0.0;
  double elapsed_seconds = 0.0;
};

/// Residual objective from the cached mode context, without touching the tensor:
///   1/2 (||X||^2 - 2 sum(A .* X_(n)B) + sum((A^T A) .* (B^T B))).
/// Exact for the factor state the context was built from, with `factor` the
/// (possibly updated) factor of the context's mode. Clamped at zero.
[[nodiscard]] double fast_ncp_objective(const Matrix& factor, const SubproblemContext& ctx, double x_norm_sq);

/// Direct evaluation through the dense reconstruction; O(R prod I_n).
[[nodiscard]] double naive_ncp_objective(const DenseTensor& x, const FactorSet& f);

/// Regularization terms added to the residual objective:
/// sum_n alpha_n/2 ||A_n||_F^2 plus either sum_n beta_n sum_r ||a_r||_1 or,
/// with squared_l1, sum_n beta_n/2 sum_i ||row_i(A_n)||_1^2.
[[nodiscard]] double penalty(const FactorSet& f, std::span<const double> alpha, std::span<const double> beta, bool squared_l1);
[[nodiscard]] double full_objective(double ncp_objective, const FactorSet& f, const SolverConfig& cfg);

/// sqrt(2 ncp) / ||X||; with ||X|| == 0 the absolute error sqrt(2 ncp).
[[nodiscard]] double relative_error(double ncp_objective, double x_norm_sq);

/// Termination test after a sweep. Change rules need two trace rows; epsilon
/// wins over the iteration and time limits when several hold.
[[nodiscard]] std::optional<Termination> should_stop(std::span<const IterationTrace> trace, const SolverConfig& cfg);

/// Evaluates trace rows from the mode-N context of each sweep.
class ObjectiveMonitor {
 public:
  ObjectiveMonitor(double x_norm_sq, const SolverConfig& cfg);

  [[nodiscard]] double x_norm_sq() const noexcept { return x_norm_sq_; }

  /// `ctx` must be the last-mode context of sweep `sweep`; anything else is a
  /// logic error in the caller.
  [[nodiscard]] IterationTrace evaluate(const FactorSet& f, const SubproblemContext& ctx, std::uint64_t sweep) const;

 private:
  double x_norm_sq_;
  const SolverConfig& cfg_;
};

/// Header `iter,objective,ncp_objective,rel_err,fit,elapsed_seconds`, values
/// with 17 significant digits.
void write_trace_csv(std::ostream& out, std::span<const IterationTrace> trace);

}  // namespace sncp
