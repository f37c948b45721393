#pragma once

// Exhaustive active-set enumeration for small NNLS problems (test-only).

#include <limits>

#include "sncp/tensor.hpp"

namespace sncp::testing {

// Solves min_{x>=0} 1/2 x^T G x - m^T x by trying every support set, solving
// the unconstrained system on it, and keeping the feasible candidate with the
// lowest objective.
inline Vector enumerate_nnls(const Matrix& g, const Vector& m) {
  const Eigen::Index r = g.rows();
  Vector best = Vector::Zero(r);
  double best_obj = 0.0;  // objective of x = 0
  for (unsigned mask = 1; mask < (1u << r); ++mask) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < r; ++i)
      if (mask & (1u << i)) idx.push_back(i);
    const Matrix sub = g(idx, idx);
    const Vector z = sub.fullPivLu().solve(Vector(m(idx)));
    if ((z.array() < 0.0).any()) continue;
    Vector x = Vector::Zero(r);
    x(idx) = z;
    const double obj = 0.5 * x.dot(g * x) - m.dot(x);
    if (obj < best_obj) {
      best_obj = obj;
      best = x;
    }
  }
  return best;
}

inline Matrix enumerate_nnls_rows(const Matrix& g, const Matrix& rhs) {
  Matrix out(rhs.rows(), rhs.cols());
  for (Eigen::Index i = 0; i < rhs.rows(); ++i) out.row(i) = enumerate_nnls(g, rhs.row(i).transpose()).transpose();
  return out;
}

}  // namespace sncp::testing
