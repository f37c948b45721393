#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace sncp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Shape = std::vector<std::size_t>;

/// Number of elements of a tensor with the given extents.
[[nodiscard]] std::size_t element_count(const Shape& shape);

/// Dense N-way array stored in one flat buffer with the first mode varying
/// fastest (the column-major generalization), so the mode-1 unfolding is a
/// plain reshape of the buffer.
///
/// Entries must be finite. Nonnegativity is not a type invariant; it is
/// checked where a decomposition starts.
class DenseTensor {
 public:
  DenseTensor() = default;

  /// Zero tensor of the given shape.
  explicit DenseTensor(Shape shape);
  DenseTensor(Shape shape, std::vector<double> data);

  [[nodiscard]] std::size_t order() const noexcept { return shape_.size(); }
  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t extent(std::size_t mode) const { return shape_.at(mode); }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] std::span<double> data() noexcept { return data_; }

  /// Element at a multi-index (zero-based, one index per mode).
  [[nodiscard]] double at(std::span<const std::size_t> index) const;
  double& at(std::span<const std::size_t> index);

  /// Linear offset of a multi-index in the flat buffer.
  [[nodiscard]] std::size_t offset(std::span<const std::size_t> index) const;

  [[nodiscard]] double squared_norm() const noexcept;
  [[nodiscard]] double min_value() const noexcept;

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// The N factor matrices of a rank-R Kruskal model; factor n is I_n x R.
struct FactorSet {
  std::vector<Matrix> factors;

  FactorSet() = default;
  explicit FactorSet(std::vector<Matrix> fs);

  [[nodiscard]] std::size_t order() const noexcept { return factors.size(); }
  [[nodiscard]] Eigen::Index rank() const noexcept { return factors.empty() ? 0 : factors.front().cols(); }
  [[nodiscard]] Shape shape() const;

  Matrix& operator[](std::size_t n) { return factors.at(n); }
  const Matrix& operator[](std::size_t n) const { return factors.at(n); }

  /// Throws ShapeError unless every factor n has shape(n) rows and a common column count.
  void check_against(const Shape& shape) const;

  [[nodiscard]] double min_value() const;
};

/// Per-mode quantities shared by a block update and the objective evaluation:
/// the MTTKRP X_(n) B^(n) and the Khatri-Rao gram (B^(n))^T B^(n).
struct SubproblemContext {
  Matrix mttkrp;
  Matrix gram;
  std::size_t mode = 0;
  /// Sweep that produced the context; lets consumers reject stale data.
  std::uint64_t sweep = 0;
};

/// Mode-n unfolding (zero-based mode). Columns enumerate the remaining modes
/// with the lowest remaining mode varying fastest, which makes
/// unfold(kruskal_to_dense(f), n) == f[n] * khatri_rao(f without n, descending)^T.
[[nodiscard]] Matrix unfold(const DenseTensor& t, std::size_t mode);

/// Inverse of unfold.
[[nodiscard]] DenseTensor fold(const Matrix& m, std::size_t mode, const Shape& shape);

/// Column-wise Kronecker product of the inputs in the given order; the last
/// matrix's row index varies fastest.
[[nodiscard]] Matrix khatri_rao(std::span<const Matrix> ms);

/// khatri_rao(A^(N), ..., A^(n+1), A^(n-1), ..., A^(1)).
[[nodiscard]] Matrix khatri_rao_excluding(const FactorSet& f, std::size_t mode);

/// X_(n) times khatri_rao_excluding(f, n), computed without materializing the
/// unfolding.
[[nodiscard]] Matrix mttkrp(const DenseTensor& t, const FactorSet& f, std::size_t mode);

/// X_(1)^T A_1 as a (I_2...I_N) x R matrix: the contraction with the first
/// factor that the MTTKRPs of modes 2..N share within one sweep.
[[nodiscard]] Matrix first_mode_partial(const DenseTensor& t, const Matrix& first_factor);

/// mttkrp(t, f, mode) for mode >= 1, computed from first_mode_partial(t, f[0])
/// in O(I_2...I_N R) instead of O(I_1...I_N R).
[[nodiscard]] Matrix mttkrp_from_partial(const Matrix& partial, const Shape& shape, const FactorSet& f, std::size_t mode);

/// (A^(m))^T A^(m) for every factor.
[[nodiscard]] std::vector<Matrix> factor_grams(const FactorSet& f);

/// Hadamard product of the factor grams of all modes except `mode`.
[[nodiscard]] Matrix gram_excluding(const FactorSet& f, std::size_t mode);
[[nodiscard]] Matrix gram_excluding(std::span<const Matrix> grams, std::size_t mode);

/// Dense tensor of the Kruskal model: sum over r of the outer products of column r.
[[nodiscard]] DenseTensor kruskal_to_dense(const FactorSet& f);

}  // namespace sncp
