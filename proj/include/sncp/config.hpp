#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace sncp {

/// Block update strategy.
enum class Method { MU, ALS, HALS, APG, ANLS_AS, ANLS_BPP };

inline constexpr Method kAllMethods[] = {Method::MU, Method::ALS, Method::HALS, Method::APG, Method::ANLS_AS, Method::ANLS_BPP};

/// Which quantity's absolute change ends the iteration.
enum class StopRule { objective_change, relerr_change };

enum class Termination { epsilon_reached, max_iters, max_time };

/// CLI spelling: "mu", "als", "hals", "apg", "anls-as", "anls-bpp".
[[nodiscard]] std::string_view to_string(Method m);
[[nodiscard]] std::string_view to_string(StopRule r);
[[nodiscard]] std::string_view to_string(Termination t);

/// Case-insensitive; '_' and '-' are interchangeable. Throws ConfigError.
[[nodiscard]] Method parse_method(std::string_view name);
[[nodiscard]] StopRule parse_stop_rule(std::string_view name);

/// ANLS methods penalize squared l1 norms of factor rows instead of l1 norms
/// of columns, and fold the penalty into the gram.
[[nodiscard]] constexpr bool uses_squared_l1(Method m) { return m == Method::ANLS_AS || m == Method::ANLS_BPP; }

struct SolverConfig {
  Eigen::Index rank = 10;
  /// Frobenius weights, one per mode or a single value shared by all modes.
  std::vector<double> alpha{1e-6};
  /// Sparsity weights, same convention as alpha.
  std::vector<double> beta{0.0};
  Method method = Method::ANLS_BPP;
  double stop_epsilon = 1e-8;
  StopRule stop_rule = StopRule::relerr_change;
  std::size_t max_iters = 10000;
  double max_seconds = std::numeric_limits<double>::infinity();
  std::uint64_t rng_seed = 0;
  /// Lower clamp for MU denominators and MU iterates.
  double mu_floor = 1e-16;
  /// Added to every entry of the MU initialization.
  double mu_init_offset = 1e-9;
  double apg_delta_omega = 0.9999;
  double nnls_tol = 1e-10;

  /// Throws ConfigError naming the offending field.
  void validate(std::size_t order) const;

  [[nodiscard]] double alpha_for(std::size_t mode) const { return alpha.size() == 1 ? alpha.front() : alpha.at(mode); }
  [[nodiscard]] double beta_for(std::size_t mode) const { return beta.size() == 1 ? beta.front() : beta.at(mode); }
};

}  // namespace sncp
