#include "sncp/metrics.hpp"

#include <cmath>
#include <limits>

#include "sncp/error.hpp"

namespace sncp {

namespace {

void check_threshold(double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("threshold: must be > 0");
}

// Pearson correlation; NaN when either column is constant.
double pearson(const Vector& x, const Vector& y) {
  const Vector xc = x.array() - x.mean();
  const Vector yc = y.array() - y.mean();
  const double denom = xc.norm() * yc.norm();
  if (!(denom > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return xc.dot(yc) / denom;
}

}  // namespace

double sparsity_level(const Matrix& a, double threshold) {
  check_threshold(threshold);
  if (a.size() == 0) return 0.0;
  return static_cast<double>((a.array() < threshold).count()) / static_cast<double>(a.size());
}

std::vector<Eigen::Index> nonzero_component_indices(const Matrix& a, double threshold) {
  check_threshold(threshold);
  std::vector<Eigen::Index> cols;
  for (Eigen::Index r = 0; r < a.cols(); ++r) {
    if (a.rows() > 0 && a.col(r).maxCoeff() >= threshold) cols.push_back(r);
  }
  return cols;
}

Eigen::Index count_nonzero_components(const Matrix& a, double threshold) {
  return static_cast<Eigen::Index>(nonzero_component_indices(a, threshold).size());
}

Matrix select_columns(const Matrix& a, const std::vector<Eigen::Index>& cols) {
  Matrix out(a.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = a.col(cols[j]);
  return out;
}

SparsityReport sparsity_report(const FactorSet& f, std::size_t component_mode, double threshold) {
  if (component_mode >= f.order()) throw ShapeError("component mode out of range");
  SparsityReport r;
  r.threshold = threshold;
  r.component_mode = component_mode;
  for (const auto& a : f.factors) r.per_factor_sparsity.push_back(sparsity_level(a, threshold));
  r.nonzero_components = count_nonzero_components(f[component_mode], threshold);
  return r;
}

PsnrReport psnr(const Matrix& estimated, const Matrix& reference) {
  if (estimated.rows() != reference.rows()) {
    throw ShapeError("psnr: estimated has " + std::to_string(estimated.rows()) + " rows, reference has " +
                     std::to_string(reference.rows()));
  }
  const auto length = static_cast<double>(estimated.rows());
  PsnrReport report;
  double total = 0.0;
  for (Eigen::Index r = 0; r < estimated.cols(); ++r) {
    const double norm = estimated.col(r).norm();
    if (!(norm > 0.0)) {
      report.excluded.push_back(r);
      continue;
    }
    const Vector t = estimated.col(r) / norm;
    Eigen::Index best = -1;
    double best_corr = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < reference.cols(); ++c) {
      if (!(reference.col(c).norm() > 0.0)) continue;
      const double corr = pearson(t, reference.col(c));
      if (corr > best_corr) {
        best_corr = corr;
        best = c;
      }
    }
    if (best < 0) {
      report.excluded.push_back(r);
      continue;
    }
    const Vector s = reference.col(best).normalized();
    const double err = (t - s).squaredNorm();
    const double db = err > 0.0 ? std::min(kPsnrCapDb, 10.0 * std::log10(length / err)) : kPsnrCapDb;
    report.matched_pairs.push_back({r, best, best_corr, db});
    total += db;
  }
  report.psnr_db = report.matched_pairs.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                : total / static_cast<double>(report.matched_pairs.size());
  return report;
}

}  // namespace sncp
