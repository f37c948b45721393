#include "sncp/nnls.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "sncp/error.hpp"

namespace sncp {

namespace {

using Llt = Eigen::LLT<Matrix>;

// Both solvers cap pivoting steps per row at this multiple of R.
constexpr Eigen::Index kIterationsPerVariable = 5;
// Full exchanges allowed without progress before BPP falls back to single swaps.
constexpr int kFullExchangeStrikes = 3;
constexpr std::size_t kMaxCachedFactorizations = 4096;

std::string pattern_key(const std::vector<char>& passive) { return {passive.begin(), passive.end()}; }

std::vector<Eigen::Index> passive_indices(const std::vector<char>& passive) {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < passive.size(); ++i) {
    if (passive[i]) idx.push_back(static_cast<Eigen::Index>(i));
  }
  return idx;
}

// Cholesky factors of principal submatrices of one gram, keyed by passive set.
class SubsystemCache {
 public:
  explicit SubsystemCache(const Matrix& gram) : gram_(gram) {}

  const Llt& factor(const std::vector<char>& passive, const std::vector<Eigen::Index>& idx) {
    auto key = pattern_key(passive);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    if (cache_.size() >= kMaxCachedFactorizations) cache_.clear();
    Llt llt(gram_(idx, idx));
    if (llt.info() != Eigen::Success) throw IllConditionedError("NNLS subsystem is not positive definite", -1);
    return cache_.emplace(std::move(key), std::move(llt)).first->second;
  }

 private:
  const Matrix& gram_;
  std::unordered_map<std::string, Llt> cache_;
};

// Solution of the equality-constrained system on the passive set, zero elsewhere.
Vector solve_passive(SubsystemCache& cache, const Vector& m, const std::vector<char>& passive) {
  Vector z = Vector::Zero(m.size());
  const auto idx = passive_indices(passive);
  if (idx.empty()) return z;
  const Vector sub = cache.factor(passive, idx).solve(Vector(m(idx)));
  z(idx) = sub;
  return z;
}

bool all_positive_on(const Vector& z, const std::vector<char>& passive) {
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (passive[static_cast<std::size_t>(i)] && !(z(i) > 0.0)) return false;
  }
  return true;
}

double row_threshold(const Vector& m, double tol) { return tol * std::max(1.0, m.lpNorm<Eigen::Infinity>()); }

struct RowOutcome {
  Vector x;
  bool capped = false;
};

RowOutcome active_set_row(const Matrix& g, SubsystemCache& cache, const Vector& m, double tol, const Vector* initial) {
  const Eigen::Index r = m.size();
  const auto ur = static_cast<std::size_t>(r);
  const double thr = row_threshold(m, tol);
  RowOutcome out{Vector::Zero(r), false};
  std::vector<char> passive(ur, 0);

  if (initial != nullptr) {
    for (std::size_t i = 0; i < ur; ++i) passive[i] = (*initial)(static_cast<Eigen::Index>(i)) > 0.0 ? 1 : 0;
    const Vector z = solve_passive(cache, m, passive);
    if (all_positive_on(z, passive)) {
      out.x = z;
    } else {
      std::fill(passive.begin(), passive.end(), 0);
    }
  }

  std::vector<char> blocked(ur, 0);
  Eigen::Index steps = 0;
  const Eigen::Index cap = kIterationsPerVariable * r;
  for (;;) {
    const Vector w = m - g * out.x;
    Eigen::Index enter = -1;
    double best = thr;
    for (Eigen::Index i = 0; i < r; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      if (!passive[ui] && !blocked[ui] && w(i) > best) {
        best = w(i);
        enter = i;
      }
    }
    if (enter < 0) break;
    if (++steps > cap) {
      out.capped = true;
      break;
    }
    passive[static_cast<std::size_t>(enter)] = 1;

    bool first = true;
    for (;;) {
      const Vector z = solve_passive(cache, m, passive);
      if (all_positive_on(z, passive)) {
        out.x = z;
        std::fill(blocked.begin(), blocked.end(), 0);
        break;
      }
      if (first && !(z(enter) > 0.0)) {
        // Only possible through rounding: the entering variable cannot move.
        passive[static_cast<std::size_t>(enter)] = 0;
        blocked[static_cast<std::size_t>(enter)] = 1;
        break;
      }
      first = false;
      double alpha = std::numeric_limits<double>::infinity();
      Eigen::Index leave = -1;
      for (Eigen::Index i = 0; i < r; ++i) {
        if (passive[static_cast<std::size_t>(i)] && !(z(i) > 0.0)) {
          const double step = out.x(i) / (out.x(i) - z(i));
          if (step < alpha) {
            alpha = step;
            leave = i;
          }
        }
      }
      out.x += alpha * (z - out.x);
      out.x(leave) = 0.0;
      for (Eigen::Index i = 0; i < r; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (passive[ui] && out.x(i) <= 0.0) {
          passive[ui] = 0;
          out.x(i) = 0.0;
        }
      }
    }
  }
  return out;
}

NnlsResult finish(const NnlsProblem& p, Matrix x, bool capped) {
  x = x.cwiseMax(0.0);
  NnlsResult result{std::move(x), {}};
  result.certificate = kkt_certificate(p.gram, p.rhs, result.solution);
  result.certificate.iteration_cap_hit = capped;
  return result;
}

NnlsResult run_active_set(const NnlsProblem& p, double tol, const Matrix* initial) {
  validate(p);
  SubsystemCache cache(p.gram);
  Matrix x(p.rhs.rows(), p.rhs.cols());
  bool capped = false;
  for (Eigen::Index row = 0; row < p.rhs.rows(); ++row) {
    const Vector m = p.rhs.row(row).transpose();
    Vector init;
    if (initial != nullptr) init = initial->row(row).transpose();
    auto outcome = active_set_row(p.gram, cache, m, tol, initial != nullptr ? &init : nullptr);
    x.row(row) = outcome.x.transpose();
    capped = capped || outcome.capped;
  }
  return finish(p, std::move(x), capped);
}

// Re-solves the listed columns of x (R x I layout) on their passive sets and
// refreshes the matching gradient columns y = G x - m. Columns sharing a
// passive set share one factorization.
void solve_columns(const Matrix& g, const Matrix& mt, const std::vector<std::vector<char>>& passive,
                   std::vector<Eigen::Index> cols, Matrix& x, Matrix& y) {
  std::stable_sort(cols.begin(), cols.end(), [&](Eigen::Index a, Eigen::Index b) {
    return passive[static_cast<std::size_t>(a)] < passive[static_cast<std::size_t>(b)];
  });
  std::size_t begin = 0;
  while (begin < cols.size()) {
    const auto& pattern = passive[static_cast<std::size_t>(cols[begin])];
    std::size_t end = begin + 1;
    while (end < cols.size() && passive[static_cast<std::size_t>(cols[end])] == pattern) ++end;
    const std::vector<Eigen::Index> group(cols.begin() + static_cast<std::ptrdiff_t>(begin),
                                          cols.begin() + static_cast<std::ptrdiff_t>(end));
    const auto idx = passive_indices(pattern);
    x(Eigen::all, group).setZero();
    if (!idx.empty()) {
      Llt llt(g(idx, idx));
      if (llt.info() != Eigen::Success) throw IllConditionedError("NNLS subsystem is not positive definite", -1);
      const Matrix solved = llt.solve(Matrix(mt(idx, group)));
      x(idx, group) = solved;
    }
    y(Eigen::all, group) = g * x(Eigen::all, group) - mt(Eigen::all, group);
    for (Eigen::Index i : idx) y(i, group).setZero();
    begin = end;
  }
}

NnlsResult run_bpp(const NnlsProblem& p, double tol, const Matrix* initial) {
  validate(p);
  const Eigen::Index r = p.gram.rows();
  const Eigen::Index n = p.rhs.rows();
  const Matrix mt = p.rhs.transpose();  // R x I, one problem per column
  Matrix x = Matrix::Zero(r, n);
  Matrix y = Matrix::Zero(r, n);

  std::vector<std::vector<char>> passive(static_cast<std::size_t>(n), std::vector<char>(static_cast<std::size_t>(r), 0));
  if (initial != nullptr) {
    for (Eigen::Index c = 0; c < n; ++c)
      for (Eigen::Index i = 0; i < r; ++i)
        passive[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] = (*initial)(c, i) > 0.0 ? 1 : 0;
  }

  std::vector<Eigen::Index> pending(static_cast<std::size_t>(n));
  std::iota(pending.begin(), pending.end(), Eigen::Index{0});
  solve_columns(p.gram, mt, passive, pending, x, y);

  std::vector<double> thr(static_cast<std::size_t>(n));
  for (Eigen::Index c = 0; c < n; ++c) thr[static_cast<std::size_t>(c)] = row_threshold(mt.col(c), tol);
  std::vector<int> strikes(static_cast<std::size_t>(n), kFullExchangeStrikes);
  std::vector<Eigen::Index> best_infeasible(static_cast<std::size_t>(n), r + 1);
  std::vector<Eigen::Index> steps(static_cast<std::size_t>(n), 0);
  const Eigen::Index cap = kIterationsPerVariable * r;
  bool capped = false;

  while (!pending.empty()) {
    std::vector<Eigen::Index> changed;
    for (Eigen::Index c : pending) {
      const auto uc = static_cast<std::size_t>(c);
      auto& pat = passive[uc];
      std::vector<Eigen::Index> infeasible;
      for (Eigen::Index i = 0; i < r; ++i) {
        const bool in_passive = pat[static_cast<std::size_t>(i)] != 0;
        if ((in_passive && x(i, c) < -thr[uc]) || (!in_passive && y(i, c) < -thr[uc])) infeasible.push_back(i);
      }
      if (infeasible.empty()) continue;
      if (++steps[uc] > cap) {
        capped = true;
        continue;
      }
      const auto count = static_cast<Eigen::Index>(infeasible.size());
      if (count < best_infeasible[uc]) {
        best_infeasible[uc] = count;
        strikes[uc] = kFullExchangeStrikes;
      } else if (strikes[uc] > 0) {
        --strikes[uc];
      } else {
        infeasible = {infeasible.back()};
      }
      for (Eigen::Index i : infeasible) pat[static_cast<std::size_t>(i)] ^= 1;
      changed.push_back(c);
    }
    if (!changed.empty()) solve_columns(p.gram, mt, passive, changed, x, y);
    pending = std::move(changed);
  }
  return finish(p, x.transpose(), capped);
}

}  // namespace

bool KktCertificate::acceptable(double tol) const {
  const double lim = tol * scale;
  return max_primal_violation <= lim && max_dual_violation <= lim && max_stationarity <= lim &&
         max_complementarity <= std::sqrt(tol) * scale;
}

void validate(const NnlsProblem& p) {
  const Eigen::Index r = p.gram.rows();
  if (r == 0 || p.gram.cols() != r) throw ShapeError("NNLS gram must be a non-empty square matrix");
  if (p.rhs.cols() != r) throw ShapeError("NNLS rhs has " + std::to_string(p.rhs.cols()) + " columns, gram is " + std::to_string(r) + " x " + std::to_string(r));
  if (!p.gram.allFinite() || !p.rhs.allFinite()) throw DataError("NNLS problem contains non-finite values");
  const double asym = (p.gram - p.gram.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * std::max(1.0, p.gram.cwiseAbs().maxCoeff())) throw DataError("NNLS gram is not symmetric");
  Llt llt(p.gram);
  if (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0)) {
    throw IllConditionedError("NNLS gram is not positive definite", -1);
  }
}

KktCertificate kkt_certificate(const Matrix& gram, const Matrix& rhs, const Matrix& solution) {
  KktCertificate cert;
  const Matrix grad = solution * gram - rhs;
  for (Eigen::Index j = 0; j < solution.cols(); ++j) {
    for (Eigen::Index i = 0; i < solution.rows(); ++i) {
      const double x = solution(i, j);
      const double g = grad(i, j);
      cert.max_primal_violation = std::max(cert.max_primal_violation, -x);
      if (x == 0.0) {
        cert.max_dual_violation = std::max(cert.max_dual_violation, -g);
      } else if (x > 0.0) {
        cert.max_stationarity = std::max(cert.max_stationarity, std::abs(g));
      }
      cert.max_complementarity = std::max(cert.max_complementarity, std::abs(x * g));
    }
  }
  const double max_rhs = rhs.size() > 0 ? rhs.cwiseAbs().maxCoeff() : 0.0;
  const double max_x = solution.size() > 0 ? solution.cwiseAbs().maxCoeff() : 0.0;
  const double max_g = gram.size() > 0 ? gram.cwiseAbs().maxCoeff() : 0.0;
  cert.scale = std::max({1.0, max_rhs, max_g * max_x});
  return cert;
}

NnlsResult nnls_active_set(const NnlsProblem& p, double tol) { return run_active_set(p, tol, nullptr); }

NnlsResult nnls_active_set(const NnlsProblem& p, double tol, const Matrix& initial) {
  if (initial.rows() != p.rhs.rows() || initial.cols() != p.rhs.cols()) throw ShapeError("NNLS initial guess has the wrong shape");
  return run_active_set(p, tol, &initial);
}

NnlsResult nnls_block_principal_pivoting(const NnlsProblem& p, double tol) { return run_bpp(p, tol, nullptr); }

NnlsResult nnls_block_principal_pivoting(const NnlsProblem& p, double tol, const Matrix& initial) {
  if (initial.rows() != p.rhs.rows() || initial.cols() != p.rhs.cols()) throw ShapeError("NNLS initial guess has the wrong shape");
  return run_bpp(p, tol, &initial);
}

}  // namespace sncp
