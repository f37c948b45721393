#pragma once

// Test-only generators and brute-force oracles. Nothing here calls into the
// kernels under test.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "sncp/tensor.hpp"

namespace sncp::testing {

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
  return m;
}

inline DenseTensor random_tensor(std::mt19937_64& rng, const Shape& shape, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> data(element_count(shape));
  for (auto& v : data) v = u(rng);
  return DenseTensor(shape, std::move(data));
}

inline FactorSet random_factors(std::mt19937_64& rng, const Shape& shape, Eigen::Index rank, double lo = 0.0, double hi = 1.0) {
  std::vector<Matrix> fs;
  for (auto e : shape) fs.push_back(random_matrix(rng, static_cast<Eigen::Index>(e), rank, lo, hi));
  return FactorSet(std::move(fs));
}

inline Shape random_shape(std::mt19937_64& rng, std::size_t order, std::size_t max_extent) {
  std::uniform_int_distribution<std::size_t> e(1, max_extent);
  Shape s(order);
  for (auto& x : s) x = e(rng);
  return s;
}

// Converts a linear offset (mode-1 fastest) into a multi-index.
inline std::vector<std::size_t> multi_index(std::size_t linear, const Shape& shape) {
  std::vector<std::size_t> idx(shape.size());
  for (std::size_t m = 0; m < shape.size(); ++m) {
    idx[m] = linear % shape[m];
    linear /= shape[m];
  }
  return idx;
}

// Unfolding by explicit index arithmetic: element (i_1..i_N) goes to row i_n and
// column sum_{m != n} i_m * prod_{m' < m, m' != n} I_m'.
inline Matrix oracle_unfold(const DenseTensor& t, std::size_t mode) {
  const Shape& s = t.shape();
  const std::size_t cols = t.size() / s[mode];
  Matrix out(static_cast<Eigen::Index>(s[mode]), static_cast<Eigen::Index>(cols));
  for (std::size_t lin = 0; lin < t.size(); ++lin) {
    const auto idx = multi_index(lin, s);
    std::size_t col = 0, stride = 1;
    for (std::size_t m = 0; m < s.size(); ++m) {
      if (m == mode) continue;
      col += idx[m] * stride;
      stride *= s[m];
    }
    out(static_cast<Eigen::Index>(idx[mode]), static_cast<Eigen::Index>(col)) = t.data()[lin];
  }
  return out;
}

// Column-wise Kronecker product of two matrices by nested loops.
inline Matrix oracle_kr2(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.cols(); ++r)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < b.rows(); ++j) out(i * b.rows() + j, r) = a(i, r) * b(j, r);
  return out;
}

// Khatri-Rao of all factors except `mode`, descending mode order.
inline Matrix oracle_kr_excluding(const FactorSet& f, std::size_t mode) {
  Matrix acc;
  bool first = true;
  for (std::size_t m = f.order(); m-- > 0;) {
    if (m == mode) continue;
    acc = first ? f[m] : oracle_kr2(acc, f[m]);
    first = false;
  }
  return acc;
}

// Elementwise sum of outer products.
inline DenseTensor oracle_kruskal(const FactorSet& f) {
  const Shape s = f.shape();
  std::vector<double> data(element_count(s));
  for (std::size_t lin = 0; lin < data.size(); ++lin) {
    const auto idx = multi_index(lin, s);
    double sum = 0.0;
    for (Eigen::Index r = 0; r < f.rank(); ++r) {
      double p = 1.0;
      for (std::size_t m = 0; m < s.size(); ++m) p *= f[m](static_cast<Eigen::Index>(idx[m]), r);
      sum += p;
    }
    data[lin] = sum;
  }
  return DenseTensor(s, std::move(data));
}

// Half the squared residual of the model, entry by entry.
inline double oracle_ncp_objective(const DenseTensor& x, const FactorSet& f) {
  const DenseTensor model = oracle_kruskal(f);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x.data()[i] - model.data()[i];
    s += d * d;
  }
  return 0.5 * s;
}

inline double rel_diff(const Matrix& a, const Matrix& b) {
  const double denom = std::max(1e-300, b.norm());
  return (a - b).norm() / denom;
}

inline Matrix random_spd(std::mt19937_64& rng, Eigen::Index n, double ridge = 0.1) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix q(n + 2, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n + 2; ++i) q(i, j) = g(rng);
  Matrix spd = q.transpose() * q;
  spd.diagonal().array() += ridge;
  return spd;
}

}  // namespace sncp::testing
