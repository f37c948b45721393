#include "sncp/solvers.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <string>

#include <Eigen/Cholesky>

#include "sncp/error.hpp"

namespace sncp {

namespace {

// Cholesky factorization that also rejects numerically semidefinite systems,
// which Eigen's LLT reports as success.
bool factorize(const Matrix& s, Eigen::LLT<Matrix>& llt) {
  llt.compute(s);
  if (llt.info() != Eigen::Success) return false;
  const auto d = llt.matrixLLT().diagonal();
  const double max_diag = std::max(1e-300, s.diagonal().cwiseAbs().maxCoeff());
  return d.minCoeff() > 0.0 && d.cwiseAbs2().minCoeff() > 1e-14 * max_diag;
}

}  // namespace

FactorSet init_factors(const Shape& shape, const SolverConfig& cfg) {
  std::mt19937_64 rng(cfg.rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double offset = cfg.method == Method::MU ? cfg.mu_init_offset : 0.0;
  std::vector<Matrix> factors;
  factors.reserve(shape.size());
  for (std::size_t extent : shape) {
    Matrix a(static_cast<Eigen::Index>(extent), cfg.rank);
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      // An all-zero column is a fixed point of every update except MU and
      // would silently remove a component, so such a draw is repeated.
      do {
        for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = std::max(0.0, normal(rng));
      } while (a.col(j).isZero(0.0));
    }
    a.array() += offset;
    factors.push_back(std::move(a));
  }
  return FactorSet(std::move(factors));
}

double spectral_norm_psd(const Matrix& g, int max_iters, double rel_tol) {
  if (g.rows() != g.cols()) throw ShapeError("spectral_norm_psd: matrix must be square");
  const Eigen::Index n = g.rows();
  if (n == 0) return 0.0;
  // A slightly tilted start avoids being exactly orthogonal to the top
  // eigenvector for the symmetric structures that occur in tests.
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = 1.0 + 0.01 * static_cast<double>(i);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vector w = g * v;
    const double next = w.norm();
    if (next == 0.0) return 0.0;
    v = w / next;
    const bool converged = std::abs(next - lambda) <= rel_tol * next;
    lambda = next;
    if (converged) break;
  }
  return lambda;
}

Matrix update_mu(const Matrix& a, const SubproblemContext& ctx, double alpha, double beta, double floor) {
  Matrix denom = a * ctx.gram;
  denom.array() += beta;
  if (alpha != 0.0) denom += alpha * a;
  return (a.array() * ctx.mttkrp.array() / denom.array().max(floor)).max(floor).matrix();
}

Matrix update_als(const SubproblemContext& ctx, double alpha, double beta) {
  Matrix rhs = ctx.mttkrp.transpose();
  rhs.array() -= beta;
  Eigen::LLT<Matrix> llt;
  Matrix system = ctx.gram;
  system.diagonal().array() += alpha;
  if (!factorize(system, llt)) {
    system.diagonal().array() += 1e-10;
    if (!factorize(system, llt)) {
      throw IllConditionedError("least-squares system is singular; increase alpha", static_cast<int>(ctx.mode));
    }
  }
  return llt.solve(rhs).transpose().cwiseMax(0.0);
}

Matrix update_hals(Matrix a, const SubproblemContext& ctx, double alpha, double beta, bool normalize) {
  const Matrix& g = ctx.gram;
  for (Eigen::Index r = 0; r < a.cols(); ++r) {
    const double denom = g(r, r) + alpha;
    if (!(denom > 0.0)) {
      a.col(r).setZero();
      continue;
    }
    Vector col = ctx.mttkrp.col(r) - a * g.col(r) + g(r, r) * a.col(r);
    col.array() -= beta;
    a.col(r) = (col / denom).cwiseMax(0.0);
    if (normalize) {
      const double norm = a.col(r).norm();
      if (norm > 0.0) a.col(r) /= norm;
    }
  }
  return a;
}

Matrix projected_gradient_step(const Matrix& point, const SubproblemContext& ctx, double alpha, double beta,
                               double lipschitz) {
  Matrix grad = point * ctx.gram - ctx.mttkrp;
  if (alpha != 0.0) grad += alpha * point;
  grad.array() += beta;
  return (point - grad / lipschitz).cwiseMax(0.0);
}

double apg_lipschitz(const Matrix& gram, double alpha) {
  const double l = spectral_norm_psd(gram);
  if (l > 0.0) return l;
  return alpha > 0.0 ? alpha : 1.0;
}

double apg_extrapolation_weight(double t_prev, double t_next, double lipschitz_prev, double lipschitz, double delta) {
  return std::min((t_prev - 1.0) / t_next, delta * std::sqrt(lipschitz_prev / lipschitz));
}

Matrix augmented_gram(const Matrix& gram, double alpha, double beta) {
  Matrix s = gram;
  if (beta != 0.0) s.array() += beta;
  s.diagonal().array() += alpha;
  return s;
}

Matrix update_anls(const Matrix& a, const SubproblemContext& ctx, double alpha, double beta, NnlsVariant variant,
                   double tol) {
  NnlsProblem p{augmented_gram(ctx.gram, alpha, beta), ctx.mttkrp};
  try {
    NnlsResult r = variant == NnlsVariant::active_set ? nnls_active_set(p, tol, a)
                                                      : nnls_block_principal_pivoting(p, tol, a);
    return std::move(r.solution);
  } catch (const IllConditionedError& e) {
    throw IllConditionedError(std::string(e.what()) + "; increase alpha", static_cast<int>(ctx.mode));
  }
}

NcpSolver::NcpSolver(const DenseTensor& x, SolverConfig cfg, FactorSet initial)
    : x_(x), cfg_(std::move(cfg)), factors_(std::move(initial)), monitor_(x.squared_norm(), cfg_) {
  cfg_.validate(x.order());
  factors_.check_against(x.shape());
  if (factors_.rank() != cfg_.rank) throw ShapeError("initial factors have the wrong rank");
  grams_ = factor_grams(factors_);
  const SubproblemContext last = context(factors_.order() - 1);
  objective_ = monitor_.evaluate(factors_, last, sweep_).objective;
}

SubproblemContext NcpSolver::context(std::size_t mode) const {
  SubproblemContext ctx;
  ctx.mode = mode;
  ctx.sweep = sweep_;
  ctx.mttkrp = mttkrp(x_, factors_, mode);
  ctx.gram = gram_excluding(std::span<const Matrix>(grams_), mode);
  return ctx;
}

SubproblemContext NcpSolver::sweep_context(std::size_t mode) {
  if (mode == 0) return context(0);
  if (mode == 1) partial_ = first_mode_partial(x_, factors_[0]);
  SubproblemContext ctx;
  ctx.mode = mode;
  ctx.sweep = sweep_;
  ctx.mttkrp = mttkrp_from_partial(partial_, x_.shape(), factors_, mode);
  ctx.gram = gram_excluding(std::span<const Matrix>(grams_), mode);
  return ctx;
}

void NcpSolver::set_factor(std::size_t mode, Matrix a) {
  factors_.factors[mode] = std::move(a);
  grams_[mode] = factors_[mode].transpose() * factors_[mode];
}

SubproblemContext NcpSolver::sweep_plain() {
  const std::size_t order = factors_.order();
  SubproblemContext ctx;
  for (std::size_t n = 0; n < order; ++n) {
    ctx = sweep_context(n);
    const double alpha = cfg_.alpha_for(n);
    const double beta = cfg_.beta_for(n);
    switch (cfg_.method) {
      case Method::MU: set_factor(n, update_mu(factors_[n], ctx, alpha, beta, cfg_.mu_floor)); break;
      case Method::ALS: set_factor(n, update_als(ctx, alpha, beta)); break;
      case Method::HALS: set_factor(n, update_hals(factors_[n], ctx, alpha, beta, n + 1 < order)); break;
      case Method::ANLS_AS:
        set_factor(n, update_anls(factors_[n], ctx, alpha, beta, NnlsVariant::active_set, cfg_.nnls_tol));
        break;
      case Method::ANLS_BPP:
        set_factor(n, update_anls(factors_[n], ctx, alpha, beta, NnlsVariant::block_principal_pivoting, cfg_.nnls_tol));
        break;
      case Method::APG: throw std::logic_error("APG uses its own sweep");
    }
  }
  return ctx;
}

SubproblemContext NcpSolver::sweep_apg(double t_next, std::vector<double>& lipschitz_out) {
  const std::size_t order = factors_.order();
  const FactorSet start = factors_;
  const FactorSet& older = apg_.factors_prev ? *apg_.factors_prev : start;
  lipschitz_out.assign(order, 0.0);
  SubproblemContext ctx;
  for (std::size_t n = 0; n < order; ++n) {
    ctx = sweep_context(n);
    const double alpha = cfg_.alpha_for(n);
    const double l = apg_lipschitz(ctx.gram, alpha);
    const double l_prev = apg_.lipschitz_prev.empty() ? l : apg_.lipschitz_prev[n];
    const double omega = apg_extrapolation_weight(apg_.t, t_next, l_prev, l, cfg_.apg_delta_omega);
    const Matrix point = start[n] + omega * (start[n] - older[n]);
    set_factor(n, projected_gradient_step(point, ctx, alpha, cfg_.beta_for(n), l));
    lipschitz_out[n] = l;
  }
  return ctx;
}

SubproblemContext NcpSolver::sweep_from(const FactorSet& start, std::vector<double>& lipschitz_out) {
  factors_ = start;
  grams_ = factor_grams(factors_);
  lipschitz_out.assign(factors_.order(), 0.0);
  SubproblemContext ctx;
  for (std::size_t n = 0; n < factors_.order(); ++n) {
    ctx = sweep_context(n);
    const double alpha = cfg_.alpha_for(n);
    const double l = apg_lipschitz(ctx.gram, alpha);
    set_factor(n, projected_gradient_step(factors_[n], ctx, alpha, cfg_.beta_for(n), l));
    lipschitz_out[n] = l;
  }
  return ctx;
}

double NcpSolver::evaluate(const SubproblemContext& last) {
  last_row_ = monitor_.evaluate(factors_, last, sweep_);
  if (!std::isfinite(last_row_.objective)) {
    throw Error("objective became non-finite at iteration " + std::to_string(sweep_));
  }
  return last_row_.objective;
}

IterationTrace NcpSolver::step() {
  ++sweep_;
  last_restarted_ = false;
  if (cfg_.method != Method::APG) {
    objective_ = evaluate(sweep_plain());
    return last_row_;
  }
  const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * apg_.t * apg_.t));
  FactorSet start = factors_;
  std::vector<double> lipschitz;
  double obj = evaluate(sweep_apg(t_next, lipschitz));
  if (obj > objective_) {
    obj = evaluate(sweep_from(start, lipschitz));
    ++restarts_;
    last_restarted_ = true;
  }
  apg_.factors_prev = std::move(start);
  apg_.lipschitz_prev = std::move(lipschitz);
  apg_.t = t_next;
  objective_ = obj;
  return last_row_;
}

DecompositionResult decompose(const DenseTensor& x, const SolverConfig& cfg, std::optional<FactorSet> initial,
                              const ProgressCallback& progress) {
  using Clock = std::chrono::steady_clock;
  if (x.order() < 3) throw DataError("tensor must have order >= 3, got " + std::to_string(x.order()));
  if (x.min_value() < 0.0) throw DataError("tensor has negative entries");
  cfg.validate(x.order());
  if (initial && initial->min_value() < 0.0) throw DataError("initial factors have negative entries");

  const auto t0 = Clock::now();
  auto seconds = [&] { return std::chrono::duration<double>(Clock::now() - t0).count(); };

  NcpSolver solver(x, cfg, initial ? std::move(*initial) : init_factors(x.shape(), cfg));
  DecompositionResult result{solver.factors(), {}, Termination::max_iters, 0, 0.0, solver.objective(), 0};
  for (;;) {
    IterationTrace row = solver.step();
    row.elapsed_seconds = seconds();
    result.trace.push_back(row);
    if (progress && !progress(row)) break;
    if (auto stop = should_stop(result.trace, cfg)) {
      result.termination = *stop;
      break;
    }
  }
  result.factors = solver.factors();
  result.iterations = result.trace.size();
  result.wall_seconds = seconds();
  result.apg_restarts = solver.apg_restarts();
  return result;
}

}  // namespace sncp
