#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>
#include <stdexcept>

#include "sncp/error.hpp"
#include "sncp/objective.hpp"
#include "test_support.hpp"

using namespace sncp;
using namespace sncp::testing;

namespace {

SubproblemContext make_context(const DenseTensor& x, const FactorSet& f, std::size_t mode, std::uint64_t sweep = 0) {
  return SubproblemContext{mttkrp(x, f, mode), gram_excluding(f, mode), mode, sweep};
}

IterationTrace row(std::size_t iter, double rel_err, double objective = 1.0, double elapsed = 0.0) {
  IterationTrace r;
  r.iter = iter;
  r.rel_err = rel_err;
  r.fit = 1.0 - rel_err;
  r.objective = objective;
  r.elapsed_seconds = elapsed;
  return r;
}

}  // namespace

TEST_CASE("fast objective vanishes at an exact fit") {
  std::mt19937_64 rng(1);
  const FactorSet f = random_factors(rng, {6, 5, 4}, 3);
  const DenseTensor x = kruskal_to_dense(f);
  const auto ctx = make_context(x, f, 2);
  CHECK(fast_ncp_objective(f[2], ctx, x.squared_norm()) <= 1e-10 * x.squared_norm());
}

TEST_CASE("fast objective matches the direct residual for random 6x5x4, R=3") {
  std::mt19937_64 rng(2);
  const DenseTensor x = random_tensor(rng, {6, 5, 4});
  const FactorSet f = random_factors(rng, {6, 5, 4}, 3);
  const auto ctx = make_context(x, f, 2);
  const double fast = fast_ncp_objective(f[2], ctx, x.squared_norm());
  const double naive = oracle_ncp_objective(x, f);
  CHECK(std::abs(fast - naive) <= 1e-10 * naive);
  CHECK(std::abs(naive_ncp_objective(x, f) - naive) <= 1e-12 * naive);
}

TEST_CASE("fast objective equals half the squared norm for zero factors") {
  std::mt19937_64 rng(3);
  const DenseTensor x = random_tensor(rng, {4, 3, 5});
  FactorSet f = random_factors(rng, {4, 3, 5}, 2);
  for (auto& a : f.factors) a.setZero();
  const auto ctx = make_context(x, f, 2);
  CHECK(fast_ncp_objective(f[2], ctx, x.squared_norm()) == doctest::Approx(0.5 * x.squared_norm()).epsilon(1e-14));
}

TEST_CASE("fast and direct objectives agree up to order 5 for an updated last factor") {
  std::mt19937_64 rng(4);
  for (std::size_t order = 3; order <= 5; ++order) {
    for (int trial = 0; trial < 10; ++trial) {
      const Shape shape = random_shape(rng, order, order == 5 ? 4 : 6);
      const DenseTensor x = random_tensor(rng, shape);
      FactorSet f = random_factors(rng, shape, 1 + trial % 4);
      const std::size_t last = order - 1;
      const auto ctx = make_context(x, f, last);
      // The context depends only on the other factors, so any state of the
      // last factor is admissible.
      f.factors[last] = random_matrix(rng, f[last].rows(), f[last].cols(), 0.0, 2.0);
      const double fast = fast_ncp_objective(f[last], ctx, x.squared_norm());
      const double naive = oracle_ncp_objective(x, f);
      CHECK(std::abs(fast - naive) <= 1e-10 * std::max(1.0, naive));
    }
  }
}

TEST_CASE("penalties follow the method's regularizer") {
  const Matrix a = (Matrix(2, 2) << 1, 2, 3, 4).finished();
  FactorSet f(std::vector<Matrix>{a});
  SolverConfig cfg;
  cfg.alpha = {0.0};
  cfg.beta = {0.0};
  CHECK(full_objective(5.0, f, cfg) == 5.0);

  cfg.alpha = {2.0};
  cfg.beta = {1.0};
  cfg.method = Method::HALS;
  CHECK(full_objective(5.0, f, cfg) == doctest::Approx(5.0 + 30.0 + 10.0));

  cfg.alpha = {0.0};
  cfg.method = Method::ANLS_BPP;
  CHECK(full_objective(5.0, f, cfg) == doctest::Approx(5.0 + 29.0));
}

TEST_CASE("per-mode weights apply to their own factor and penalties are monotone in weights") {
  std::mt19937_64 rng(5);
  const FactorSet f = random_factors(rng, {3, 4, 5}, 2);
  SolverConfig cfg;
  cfg.method = Method::MU;
  cfg.alpha = {0.0, 1.0, 0.0};
  cfg.beta = {0.0, 0.0, 2.0};
  const double expected = 0.5 * f[1].squaredNorm() + 2.0 * f[2].sum();
  CHECK(full_objective(0.0, f, cfg) == doctest::Approx(expected).epsilon(1e-14));
  double prev = full_objective(0.0, f, cfg);
  for (double b : {0.5, 1.0, 3.0}) {
    cfg.beta = {b, b, 2.0 + b};
    const double now = full_objective(0.0, f, cfg);
    CHECK(now >= prev);
    prev = now;
  }
}

TEST_CASE("relative error and fit follow the residual") {
  CHECK(relative_error(2.0, 16.0) == doctest::Approx(0.5));
  CHECK(relative_error(0.0, 16.0) == 0.0);
  CHECK(relative_error(2.0, 0.0) == doctest::Approx(2.0));
}

TEST_CASE("stopping rules") {
  SolverConfig cfg;
  cfg.stop_epsilon = 1e-8;
  cfg.max_iters = 100;

  SUBCASE("one entry never stops on change rules") {
    const std::vector<IterationTrace> t{row(1, 0.5)};
    CHECK_FALSE(should_stop(t, cfg).has_value());
    cfg.stop_rule = StopRule::objective_change;
    CHECK_FALSE(should_stop(t, cfg).has_value());
  }
  SUBCASE("identical consecutive relative errors stop") {
    const std::vector<IterationTrace> t{row(1, 0.5), row(2, 0.5)};
    CHECK(should_stop(t, cfg) == Termination::epsilon_reached);
  }
  SUBCASE("objective rule looks at the objective, not the relative error") {
    cfg.stop_rule = StopRule::objective_change;
    const std::vector<IterationTrace> moving{row(1, 0.5, 10.0), row(2, 0.5, 9.0)};
    CHECK_FALSE(should_stop(moving, cfg).has_value());
    const std::vector<IterationTrace> flat{row(1, 0.9, 10.0), row(2, 0.1, 10.0)};
    CHECK(should_stop(flat, cfg) == Termination::epsilon_reached);
  }
  SUBCASE("time limit with a large change") {
    cfg.max_seconds = 1.0;
    const std::vector<IterationTrace> t{row(1, 0.9, 1.0, 0.5), row(2, 0.1, 1.0, 1.5)};
    CHECK(should_stop(t, cfg) == Termination::max_time);
  }
  SUBCASE("iteration limit") {
    cfg.max_iters = 2;
    const std::vector<IterationTrace> t{row(1, 0.9), row(2, 0.1)};
    CHECK(should_stop(t, cfg) == Termination::max_iters);
  }
}

TEST_CASE("monitor rows satisfy the trace invariants and reject stale contexts") {
  std::mt19937_64 rng(6);
  const DenseTensor x = random_tensor(rng, {5, 4, 3});
  const FactorSet f = random_factors(rng, {5, 4, 3}, 2);
  SolverConfig cfg;
  cfg.beta = {0.3};
  cfg.method = Method::APG;
  const ObjectiveMonitor monitor(x.squared_norm(), cfg);
  const auto ctx = make_context(x, f, 2, 7);
  const IterationTrace r = monitor.evaluate(f, ctx, 7);
  CHECK(r.iter == 7);
  CHECK(r.rel_err == doctest::Approx(std::sqrt(2.0 * r.ncp_objective) / std::sqrt(x.squared_norm())).epsilon(1e-12));
  CHECK(r.fit == 1.0 - r.rel_err);
  CHECK(r.objective >= r.ncp_objective);

  CHECK_THROWS_AS((void)monitor.evaluate(f, ctx, 8), std::logic_error);
  CHECK_THROWS_AS((void)monitor.evaluate(f, make_context(x, f, 1, 7), 7), std::logic_error);
  CHECK_THROWS_AS(ObjectiveMonitor(std::nan(""), cfg), DataError);
}

TEST_CASE("trace CSV layout") {
  std::ostringstream out;
  std::vector<IterationTrace> t{row(1, 0.25, 3.0, 0.5)};
  t[0].ncp_objective = 2.0;
  write_trace_csv(out, t);
  CHECK(out.str() == "iter,objective,ncp_objective,rel_err,fit,elapsed_seconds\n1,3,2,0.25,0.75,0.5\n");
}

TEST_CASE("config validation and names") {
  SolverConfig cfg;
  CHECK_NOTHROW(cfg.validate(3));
  cfg.rank = 0;
  CHECK_THROWS_AS(cfg.validate(3), ConfigError);
  cfg = SolverConfig{};
  cfg.alpha = {1.0, 2.0};
  CHECK_THROWS_AS(cfg.validate(3), ConfigError);
  cfg.alpha = {1.0, 2.0, 3.0};
  CHECK_NOTHROW(cfg.validate(3));
  CHECK(cfg.alpha_for(2) == 3.0);
  cfg.beta = {-1.0};
  CHECK_THROWS_AS(cfg.validate(3), ConfigError);
  cfg = SolverConfig{};
  cfg.apg_delta_omega = 1.0;
  CHECK_THROWS_AS(cfg.validate(3), ConfigError);
  cfg = SolverConfig{};
  cfg.stop_epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(3), ConfigError);

  for (Method m : kAllMethods) CHECK(parse_method(to_string(m)) == m);
  CHECK(parse_method("ANLS_BPP") == Method::ANLS_BPP);
  CHECK_THROWS_AS((void)parse_method("newton"), ConfigError);
  CHECK(parse_stop_rule("objective_change") == StopRule::objective_change);
  CHECK(uses_squared_l1(Method::ANLS_AS));
  CHECK_FALSE(uses_squared_l1(Method::APG));
}
