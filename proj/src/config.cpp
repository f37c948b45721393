#include "sncp/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "sncp/error.hpp"

namespace sncp {

namespace {

std::string normalize(std::string_view name) {
  std::string s(name);
  for (auto& c : s) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (c == '_') c = '-';
  }
  return s;
}

void check_weights(const std::vector<double>& w, std::size_t order, const char* name) {
  if (w.size() != 1 && w.size() != order) {
    throw ConfigError(std::string(name) + ": expected 1 or " + std::to_string(order) + " values, got " + std::to_string(w.size()));
  }
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + ": values must be finite and >= 0");
  }
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::MU: return "mu";
    case Method::ALS: return "als";
    case Method::HALS: return "hals";
    case Method::APG: return "apg";
    case Method::ANLS_AS: return "anls-as";
    case Method::ANLS_BPP: return "anls-bpp";
  }
  return "?";
}

std::string_view to_string(StopRule r) { return r == StopRule::objective_change ? "objective_change" : "relerr_change"; }

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::epsilon_reached: return "epsilon_reached";
    case Termination::max_iters: return "max_iters";
    case Termination::max_time: return "max_time";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  const auto s = normalize(name);
  for (Method m : kAllMethods) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + std::string(name) + "' (expected mu, als, hals, apg, anls-as or anls-bpp)");
}

StopRule parse_stop_rule(std::string_view name) {
  const auto s = normalize(name);
  if (s == "objective-change" || s == "objective") return StopRule::objective_change;
  if (s == "relerr-change" || s == "relerr") return StopRule::relerr_change;
  throw ConfigError("unknown stop rule '" + std::string(name) + "' (expected objective_change or relerr_change)");
}

void SolverConfig::validate(std::size_t order) const {
  if (rank < 1) throw ConfigError("rank: must be >= 1");
  check_weights(alpha, order, "alpha");
  check_weights(beta, order, "beta");
  if (!(stop_epsilon > 0.0)) throw ConfigError("epsilon: must be > 0");
  if (max_iters < 1) throw ConfigError("max-iters: must be >= 1");
  if (!(max_seconds > 0.0)) throw ConfigError("max-seconds: must be > 0");
  if (!(mu_floor > 0.0)) throw ConfigError("mu-floor: must be > 0");
  if (!(mu_init_offset >= 0.0)) throw ConfigError("mu-init-offset: must be >= 0");
  if (!(apg_delta_omega >= 0.0 && apg_delta_omega < 1.0)) throw ConfigError("apg-delta-omega: must lie in [0, 1)");
  if (!(nnls_tol > 0.0)) throw ConfigError("nnls-tol: must be > 0");
}

}  // namespace sncp
