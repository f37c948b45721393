#include "sncp/objective.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

#include "sncp/error.hpp"

namespace sncp {

double fast_ncp_objective(const Matrix& factor, const SubproblemContext& ctx, double x_norm_sq) {
  if (factor.rows() != ctx.mttkrp.rows() || factor.cols() != ctx.gram.cols()) {
    throw ShapeError("fast_ncp_objective: factor does not match the context");
  }
  const double cross = factor.cwiseProduct(ctx.mttkrp).sum();
  const double model = (factor.transpose() * factor).cwiseProduct(ctx.gram).sum();
  return std::max(0.0, 0.5 * (x_norm_sq - 2.0 * cross + model));
}

double naive_ncp_objective(const DenseTensor& x, const FactorSet& f) {
  f.check_against(x.shape());
  const DenseTensor model = kruskal_to_dense(f);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x.data()[i] - model.data()[i];
    s += d * d;
  }
  return 0.5 * s;
}

double penalty(const FactorSet& f, std::span<const double> alpha, std::span<const double> beta, bool squared_l1) {
  auto weight = [](std::span<const double> w, std::size_t n) { return w.size() == 1 ? w[0] : w[n]; };
  double total = 0.0;
  for (std::size_t n = 0; n < f.order(); ++n) {
    const Matrix& a = f[n];
    const double an = weight(alpha, n);
    const double bn = weight(beta, n);
    if (an != 0.0) total += 0.5 * an * a.squaredNorm();
    if (bn != 0.0) {
      if (squared_l1) {
        total += 0.5 * bn * a.cwiseAbs().rowwise().sum().squaredNorm();
      } else {
        total += bn * a.cwiseAbs().sum();
      }
    }
  }
  return total;
}

double full_objective(double ncp_objective, const FactorSet& f, const SolverConfig& cfg) {
  return ncp_objective + penalty(f, cfg.alpha, cfg.beta, uses_squared_l1(cfg.method));
}

double relative_error(double ncp_objective, double x_norm_sq) {
  const double abs_err = std::sqrt(2.0 * std::max(0.0, ncp_objective));
  return x_norm_sq > 0.0 ? abs_err / std::sqrt(x_norm_sq) : abs_err;
}

std::optional<Termination> should_stop(std::span<const IterationTrace> trace, const SolverConfig& cfg) {
  if (trace.empty()) return std::nullopt;
  const auto& last = trace.back();
  if (trace.size() >= 2) {
    const auto& prev = trace[trace.size() - 2];
    const double change = cfg.stop_rule == StopRule::relerr_change ? std::abs(prev.rel_err - last.rel_err)
                                                                    : std::abs(prev.objective - last.objective);
    if (change < cfg.stop_epsilon) return Termination::epsilon_reached;
  }
  if (last.iter >= cfg.max_iters) return Termination::max_iters;
  if (last.elapsed_seconds >= cfg.max_seconds) return Termination::max_time;
  return std::nullopt;
}

ObjectiveMonitor::ObjectiveMonitor(double x_norm_sq, const SolverConfig& cfg) : x_norm_sq_(x_norm_sq), cfg_(cfg) {
  if (!(x_norm_sq >= 0.0) || !std::isfinite(x_norm_sq)) throw DataError("tensor norm must be finite");
}

IterationTrace ObjectiveMonitor::evaluate(const FactorSet& f, const SubproblemContext& ctx, std::uint64_t sweep) const {
  if (ctx.sweep != sweep || ctx.mode + 1 != f.order()) {
    throw std::logic_error("objective evaluated from a stale or non-final mode context");
  }
  IterationTrace row;
  row.iter = static_cast<std::size_t>(sweep);
  row.ncp_objective = fast_ncp_objective(f[ctx.mode], ctx, x_norm_sq_);
  row.objective = full_objective(row.ncp_objective, f, cfg_);
  row.rel_err = relative_error(row.ncp_objective, x_norm_sq_);
  row.fit = 1.0 - row.rel_err;
  return row;
}

void write_trace_csv(std::ostream& out, std::span<const IterationTrace> trace) {
  out << "iter,objective,ncp_objective,rel_err,fit,elapsed_seconds\n";
  for (const auto& r : trace) {
    out << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.iter, r.objective, r.ncp_objective, r.rel_err,
                       r.fit, r.elapsed_seconds);
  }
}

}  // namespace sncp
