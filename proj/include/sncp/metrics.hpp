#pragma once

#include <cstddef>
#include <vector>

#include "sncp/tensor.hpp"

namespace sncp {

/// Entries below this magnitude count as zero.
inline constexpr double kDefaultSparsityThreshold = 1e-3;
/// Reported PSNR of an exact match (finite stand-in for +inf).
inline constexpr double kPsnrCapDb = 300.0;

/// Fraction of entries strictly below `threshold`.
[[nodiscard]] double sparsity_level(const Matrix& a, double threshold = kDefaultSparsityThreshold);

/// Columns whose largest entry reaches `threshold`.
[[nodiscard]] std::vector<Eigen::Index> nonzero_component_indices(const Matrix& a,
                                                                  double threshold = kDefaultSparsityThreshold);
[[nodiscard]] Eigen::Index count_nonzero_components(const Matrix& a, double threshold = kDefaultSparsityThreshold);
[[nodiscard]] Matrix select_columns(const Matrix& a, const std::vector<Eigen::Index>& cols);

struct SparsityReport {
  std::vector<double> per_factor_sparsity;
  /// Counted on `component_mode`.
  Eigen::Index nonzero_components = 0;
  std::size_t component_mode = 0;
  double threshold = kDefaultSparsityThreshold;
};

/// Throws ShapeError when component_mode is out of range; ConfigError when threshold <= 0.
[[nodiscard]] SparsityReport sparsity_report(const FactorSet& f, std::size_t component_mode,
                                             double threshold = kDefaultSparsityThreshold);

struct MatchedPair {
  Eigen::Index estimated = 0;
  Eigen::Index reference = 0;
  /// Pearson correlation of the two columns.
  double correlation = 0.0;
  double psnr_db = 0.0;
};

struct PsnrReport {
  std::vector<MatchedPair> matched_pairs;
  /// Mean over matched pairs; NaN when nothing was matched.
  double psnr_db = 0.0;
  /// Estimated columns left out because their norm is zero or no reference
  /// column has a defined correlation with them.
  std::vector<Eigen::Index> excluded;
};

/// Normalizes every column to unit l2 norm, matches each estimated column to
/// the reference column of highest Pearson correlation (several estimates may
/// share a reference; ties go to the lower index), and scores each pair as
/// 10 log10(L / ||t - s||^2), capped at kPsnrCapDb. Throws ShapeError when the
/// row counts differ.
[[nodiscard]] PsnrReport psnr(const Matrix& estimated, const Matrix& reference);

}  // namespace sncp
