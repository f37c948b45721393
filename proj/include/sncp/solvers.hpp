#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "sncp/config.hpp"
#include "sncp/nnls.hpp"
#include "sncp/objective.hpp"
#include "sncp/tensor.hpp"

namespace sncp {

/// Random nonnegative start: entries max(0, z), z ~ N(0, 1) from a 64-bit
/// Mersenne twister seeded with cfg.rng_seed, factors filled in mode order
/// and column-major; a column drawn entirely zero is redrawn. MU adds
/// cfg.mu_init_offset to every entry.
[[nodiscard]] FactorSet init_factors(const Shape& shape, const SolverConfig& cfg);

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
[[nodiscard]] double spectral_norm_psd(const Matrix& g, int max_iters = 100, double rel_tol = 1e-10);

// Single-block updates. Every update receives the context of its own mode
// (MTTKRP and Hadamard product of the other grams) and returns the new factor.

/// Multiplicative update: A .* M ./ max(floor, A(G + alpha I) + beta), clamped below at floor.
[[nodiscard]] Matrix update_mu(const Matrix& a, const SubproblemContext& ctx, double alpha, double beta, double floor);

/// Projected unconstrained least squares: max(0, (M - beta E)(G + alpha I)^{-1}).
/// Throws IllConditionedError naming ctx.mode when the system is singular.
[[nodiscard]] Matrix update_als(const SubproblemContext& ctx, double alpha, double beta);

/// One column sweep of exact coordinate minimization. With `normalize`, each
/// nonzero updated column is rescaled to unit l2 norm.
[[nodiscard]] Matrix update_hals(Matrix a, const SubproblemContext& ctx, double alpha, double beta, bool normalize);

/// Projected gradient step with step 1/lipschitz from `point`:
///   max(0, point - (point (G + alpha I) - M + beta E) / lipschitz).
[[nodiscard]] Matrix projected_gradient_step(const Matrix& point, const SubproblemContext& ctx, double alpha, double beta,
                                             double lipschitz);

/// Step size bound for the APG block: ||G||_2, or alpha (1 when alpha is 0)
/// for a zero gram.
[[nodiscard]] double apg_lipschitz(const Matrix& gram, double alpha);

/// min((t_prev - 1) / t_next, delta * sqrt(lipschitz_prev / lipschitz)).
[[nodiscard]] double apg_extrapolation_weight(double t_prev, double t_next, double lipschitz_prev, double lipschitz,
                                              double delta);

/// G + alpha I + beta E, E the all-ones matrix.
[[nodiscard]] Matrix augmented_gram(const Matrix& gram, double alpha, double beta);

enum class NnlsVariant { active_set, block_principal_pivoting };

/// Exact block minimization of the squared-l1 penalized subproblem, warm
/// started from `a`. Throws IllConditionedError naming ctx.mode.
[[nodiscard]] Matrix update_anls(const Matrix& a, const SubproblemContext& ctx, double alpha, double beta, NnlsVariant variant,
                                 double tol = kDefaultNnlsTolerance);

/// Extrapolation memory of the APG method.
struct ApgState {
  double t = 1.0;
  std::vector<double> lipschitz_prev;  // empty until the first sweep
  std::optional<FactorSet> factors_prev;
};

/// Stateful block coordinate descent driver; one call to step() is one full
/// sweep over the modes in increasing order. The tensor must outlive it.
class NcpSolver {
 public:
  NcpSolver(const DenseTensor& x, SolverConfig cfg, FactorSet initial);

  [[nodiscard]] const FactorSet& factors() const noexcept { return factors_; }
  [[nodiscard]] const SolverConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] std::uint64_t sweeps() const noexcept { return sweep_; }
  /// Objective of the current factors (before any step: of the initialization).
  [[nodiscard]] double objective() const noexcept { return objective_; }
  [[nodiscard]] std::size_t apg_restarts() const noexcept { return restarts_; }
  [[nodiscard]] bool last_step_restarted() const noexcept { return last_restarted_; }
  [[nodiscard]] ApgState& apg_state() noexcept { return apg_; }

  /// Fresh context for `mode` from the current factors.
  [[nodiscard]] SubproblemContext context(std::size_t mode) const;

  /// Performs one sweep and returns its trace row (elapsed_seconds left 0).
  IterationTrace step();

 private:
  SubproblemContext sweep_plain();
  SubproblemContext sweep_apg(double t_next, std::vector<double>& lipschitz_out);
  SubproblemContext sweep_from(const FactorSet& start, std::vector<double>& lipschitz_out);
  /// Context for the mode-th update of a sweep; modes 2..N reuse the
  /// first-mode contraction computed right after mode 1 is updated.
  SubproblemContext sweep_context(std::size_t mode);
  void set_factor(std::size_t mode, Matrix a);
  double evaluate(const SubproblemContext& last);

  const DenseTensor& x_;
  SolverConfig cfg_;
  FactorSet factors_;
  std::vector<Matrix> grams_;
  Matrix partial_;
  ObjectiveMonitor monitor_;
  std::uint64_t sweep_ = 0;
  double objective_ = 0.0;
  IterationTrace last_row_{};
  ApgState apg_;
  std::size_t restarts_ = 0;
  bool last_restarted_ = false;
};

struct DecompositionResult {
  FactorSet factors;
  std::vector<IterationTrace> trace;
  Termination termination = Termination::max_iters;
  std::size_t iterations = 0;
  double wall_seconds = 0.0;
  /// Objective of the starting point.
  double initial_objective = 0.0;
  std::size_t apg_restarts = 0;
};

/// Called after every sweep with the newest trace row; returning false stops
/// the run early (termination reported as max_iters).
using ProgressCallback = std::function<bool(const IterationTrace&)>;

/// Runs the configured method until a stopping rule fires. Requires a
/// nonnegative tensor of order >= 3 (DataError) and a valid config
/// (ConfigError); solver failures raise IllConditionedError.
[[nodiscard]] DecompositionResult decompose(const DenseTensor& x, const SolverConfig& cfg,
                                            std::optional<FactorSet> initial = std::nullopt,
                                            const ProgressCallback& progress = {});

}  // namespace sncp
