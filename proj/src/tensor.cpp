#include "sncp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>

#include "sncp/error.hpp"

namespace sncp {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor must have at least one mode");
  for (std::size_t n = 0; n < shape.size(); ++n) {
    if (shape[n] == 0) throw ShapeError("extent of mode " + std::to_string(n + 1) + " is zero");
  }
}

// Product of the extents of modes [first, last).
std::size_t span_product(const Shape& shape, std::size_t first, std::size_t last) {
  std::size_t p = 1;
  for (std::size_t m = first; m < last; ++m) p *= shape[m];
  return p;
}

Matrix khatri_rao_ptrs(const std::vector<const Matrix*>& ms, Eigen::Index rank) {
  if (ms.empty()) return Matrix::Ones(1, rank);
  Matrix result = *ms.front();
  for (std::size_t k = 1; k < ms.size(); ++k) {
    const Matrix& next = *ms[k];
    if (next.cols() != rank) throw ShapeError("khatri_rao: inputs have different column counts");
    Matrix grown(result.rows() * next.rows(), rank);
    for (Eigen::Index r = 0; r < rank; ++r) {
      for (Eigen::Index i = 0; i < result.rows(); ++i) {
        grown.col(r).segment(i * next.rows(), next.rows()) = result(i, r) * next.col(r);
      }
    }
    result = std::move(grown);
  }
  return result;
}

// Factors of modes [first, last) in descending mode order.
std::vector<const Matrix*> descending(const FactorSet& f, std::size_t first, std::size_t last) {
  std::vector<const Matrix*> out;
  for (std::size_t m = last; m-- > first;) out.push_back(&f.factors[m]);
  return out;
}

}  // namespace

DenseTensor::DenseTensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(element_count(shape_), 0.0);
}

DenseTensor::DenseTensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("tensor data has " + std::to_string(data_.size()) + " values, shape requires " +
                     std::to_string(element_count(shape_)));
  }
  for (double v : data_) {
    if (!std::isfinite(v)) throw DataError("tensor contains a non-finite value");
  }
}

std::size_t DenseTensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index order does not match tensor order");
  std::size_t off = 0;
  std::size_t stride = 1;
  for (std::size_t m = 0; m < shape_.size(); ++m) {
    if (index[m] >= shape_[m]) throw ShapeError("index out of range in mode " + std::to_string(m + 1));
    off += index[m] * stride;
    stride *= shape_[m];
  }
  return off;
}

double DenseTensor::at(std::span<const std::size_t> index) const { return data_[offset(index)]; }
double& DenseTensor::at(std::span<const std::size_t> index) { return data_[offset(index)]; }

double DenseTensor::squared_norm() const noexcept {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

double DenseTensor::min_value() const noexcept {
  return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

FactorSet::FactorSet(std::vector<Matrix> fs) : factors(std::move(fs)) {
  for (const auto& a : factors) {
    if (a.cols() != rank()) throw ShapeError("factor matrices have different column counts");
  }
}

Shape FactorSet::shape() const {
  Shape s;
  s.reserve(factors.size());
  for (const auto& a : factors) s.push_back(static_cast<std::size_t>(a.rows()));
  return s;
}

void FactorSet::check_against(const Shape& shape) const {
  if (factors.size() != shape.size()) {
    throw ShapeError("factor set has " + std::to_string(factors.size()) + " factors, tensor has " +
                     std::to_string(shape.size()) + " modes");
  }
  for (std::size_t n = 0; n < shape.size(); ++n) {
    if (static_cast<std::size_t>(factors[n].rows()) != shape[n]) {
      throw ShapeError("factor " + std::to_string(n + 1) + " has " + std::to_string(factors[n].rows()) +
                       " rows, tensor extent is " + std::to_string(shape[n]));
    }
    if (factors[n].cols() != rank()) throw ShapeError("factor matrices have different column counts");
  }
}

double FactorSet::min_value() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& a : factors) {
    if (a.size() > 0) m = std::min(m, a.minCoeff());
  }
  return m;
}

Matrix unfold(const DenseTensor& t, std::size_t mode) {
  const Shape& shape = t.shape();
  if (mode >= shape.size()) throw ShapeError("unfold: mode out of range");
  const std::size_t left = span_product(shape, 0, mode);
  const std::size_t rows = shape[mode];
  const std::size_t right = span_product(shape, mode + 1, shape.size());
  const auto data = t.data();

  Matrix out(rows, left * right);
  for (std::size_t q = 0; q < right; ++q) {
    for (std::size_t i = 0; i < rows; ++i) {
      const double* src = data.data() + left * (i + rows * q);
      for (std::size_t l = 0; l < left; ++l) out(i, l + left * q) = src[l];
    }
  }
  return out;
}

DenseTensor fold(const Matrix& m, std::size_t mode, const Shape& shape) {
  if (mode >= shape.size()) throw ShapeError("fold: mode out of range");
  const std::size_t left = span_product(shape, 0, mode);
  const std::size_t rows = shape[mode];
  const std::size_t right = span_product(shape, mode + 1, shape.size());
  if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != left * right) {
    throw ShapeError("fold: matrix shape does not match the target tensor");
  }
  DenseTensor t(shape);
  auto data = t.data();
  for (std::size_t q = 0; q < right; ++q) {
    for (std::size_t i = 0; i < rows; ++i) {
      double* dst = data.data() + left * (i + rows * q);
      for (std::size_t l = 0; l < left; ++l) dst[l] = m(i, l + left * q);
    }
  }
  return t;
}

Matrix khatri_rao(std::span<const Matrix> ms) {
  if (ms.empty()) throw ShapeError("khatri_rao: no inputs");
  std::vector<const Matrix*> ptrs;
  for (const auto& m : ms) {
    if (m.cols() != ms.front().cols()) throw ShapeError("khatri_rao: inputs have different column counts");
    ptrs.push_back(&m);
  }
  return khatri_rao_ptrs(ptrs, ms.front().cols());
}

Matrix khatri_rao_excluding(const FactorSet& f, std::size_t mode) {
  if (mode >= f.order()) throw ShapeError("khatri_rao_excluding: mode out of range");
  auto ptrs = descending(f, mode + 1, f.order());
  auto lower = descending(f, 0, mode);
  ptrs.insert(ptrs.end(), lower.begin(), lower.end());
  return khatri_rao_ptrs(ptrs, f.rank());
}

Matrix mttkrp(const DenseTensor& t, const FactorSet& f, std::size_t mode) {
  const Shape& shape = t.shape();
  f.check_against(shape);
  if (mode >= shape.size()) throw ShapeError("mttkrp: mode out of range");
  const Eigen::Index rank = f.rank();
  const auto left = static_cast<Eigen::Index>(span_product(shape, 0, mode));
  const auto rows = static_cast<Eigen::Index>(shape[mode]);
  const auto right = static_cast<Eigen::Index>(span_product(shape, mode + 1, shape.size()));
  const double* x = t.data().data();

  // X viewed as left x rows x right; B^(n) rows index (l, q) with l fastest,
  // so B^(n) = khatri_rao(right block, left block).
  const Matrix b_left = khatri_rao_ptrs(descending(f, 0, mode), rank);
  const Matrix b_right = khatri_rao_ptrs(descending(f, mode + 1, shape.size()), rank);

  Matrix out = Matrix::Zero(rows, rank);
  if (left == 1) {
    Eigen::Map<const Matrix> xm(x, rows, right);
    out.noalias() = xm * b_right;
    out.array().rowwise() *= b_left.row(0).array();
  } else if (right == 1) {
    Eigen::Map<const Matrix> xm(x, left, rows);
    out.noalias() = xm.transpose() * b_left;
    out.array().rowwise() *= b_right.row(0).array();
  } else {
    Matrix slab_times_left(rows, rank);
    for (Eigen::Index q = 0; q < right; ++q) {
      Eigen::Map<const Matrix> slab(x + q * left * rows, left, rows);
      slab_times_left.noalias() = slab.transpose() * b_left;
      out.array() += slab_times_left.array().rowwise() * b_right.row(q).array();
    }
  }
  return out;
}

Matrix first_mode_partial(const DenseTensor& t, const Matrix& first_factor) {
  const Shape& shape = t.shape();
  if (shape.empty() || first_factor.rows() != static_cast<Eigen::Index>(shape[0])) {
    throw ShapeError("first_mode_partial: factor rows do not match the first extent");
  }
  const auto rows = static_cast<Eigen::Index>(shape[0]);
  const auto rest = static_cast<Eigen::Index>(span_product(shape, 1, shape.size()));
  Eigen::Map<const Matrix> xm(t.data().data(), rows, rest);
  return xm.transpose() * first_factor;
}

Matrix mttkrp_from_partial(const Matrix& partial, const Shape& shape, const FactorSet& f, std::size_t mode) {
  f.check_against(shape);
  if (mode == 0 || mode >= shape.size()) throw ShapeError("mttkrp_from_partial: mode must be in [1, order)");
  const Eigen::Index rank = f.rank();
  const auto left = static_cast<Eigen::Index>(span_product(shape, 1, mode));
  const auto rows = static_cast<Eigen::Index>(shape[mode]);
  const auto right = static_cast<Eigen::Index>(span_product(shape, mode + 1, shape.size()));
  if (partial.rows() != left * rows * right || partial.cols() != rank) {
    throw ShapeError("mttkrp_from_partial: partial has the wrong shape");
  }
  // Column r of the partial is a left x rows x right tensor (left fastest).
  const Matrix b_left = khatri_rao_ptrs(descending(f, 1, mode), rank);
  const Matrix b_right = khatri_rao_ptrs(descending(f, mode + 1, shape.size()), rank);
  Matrix out = Matrix::Zero(rows, rank);
  for (Eigen::Index r = 0; r < rank; ++r) {
    const double* p = partial.col(r).data();
    for (Eigen::Index q = 0; q < right; ++q) {
      Eigen::Map<const Matrix> slab(p + q * left * rows, left, rows);
      out.col(r).noalias() += b_right(q, r) * (slab.transpose() * b_left.col(r));
    }
  }
  return out;
}

std::vector<Matrix> factor_grams(const FactorSet& f) {
  std::vector<Matrix> grams;
  grams.reserve(f.order());
  for (const auto& a : f.factors) grams.emplace_back(a.transpose() * a);
  return grams;
}

Matrix gram_excluding(std::span<const Matrix> grams, std::size_t mode) {
  if (mode >= grams.size()) throw ShapeError("gram_excluding: mode out of range");
  const Eigen::Index rank = grams.front().rows();
  Matrix g = Matrix::Ones(rank, rank);
  for (std::size_t m = 0; m < grams.size(); ++m) {
    if (m == mode) continue;
    if (grams[m].rows() != rank || grams[m].cols() != rank) throw ShapeError("gram_excluding: inconsistent grams");
    g.array() *= grams[m].array();
  }
  return g;
}

Matrix gram_excluding(const FactorSet& f, std::size_t mode) {
  const auto grams = factor_grams(f);
  return gram_excluding(grams, mode);
}

DenseTensor kruskal_to_dense(const FactorSet& f) {
  if (f.order() == 0) throw ShapeError("kruskal_to_dense: empty factor set");
  const Shape shape = f.shape();
  DenseTensor t(shape);
  const auto rows = static_cast<Eigen::Index>(shape[0]);
  const auto rest = static_cast<Eigen::Index>(t.size() / shape[0]);
  Eigen::Map<Matrix> out(t.data().data(), rows, rest);
  const Matrix b = khatri_rao_ptrs(descending(f, 1, f.order()), f.rank());
  out.noalias() = f.factors[0] * b.transpose();
  return t;
}

}  // namespace sncp
