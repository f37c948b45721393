#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "sncp/config.hpp"
#include "sncp/objective.hpp"
#include "sncp/tensor.hpp"

namespace sncp {

/// Seed of the bundled source-signal asset.
inline constexpr std::uint64_t kSignalAssetSeed = 20200101;

/// Independent stream number `index` derived from `base` (splitmix64 of base + index).
[[nodiscard]] std::uint64_t split_seed(std::uint64_t base, std::uint64_t index);

/// `channels` nonnegative sparse sources of `length` samples. Each channel has
/// a zero fraction drawn from [0.7, 0.9] and its support split into 2-5 bursts
/// shaped as half-sine bumps, plateaus, ramps or decays.
[[nodiscard]] Matrix generate_sparse_signals(Eigen::Index length, Eigen::Index channels, std::uint64_t seed);

struct SyntheticSpec {
  /// L x K source matrix, the ground truth of the first mode.
  Matrix signals;
  /// Row counts of the uniform [0, 1) mixing factors of modes 2..N.
  std::vector<Eigen::Index> mixing_extents;
  /// +inf means no noise.
  double snr_db = 40.0;
  std::uint64_t rng_seed = 0;
};

struct SyntheticData {
  DenseTensor tensor;
  FactorSet truth;
  /// Measured 10 log10(||clean||^2 / ||noise||^2); +inf without noise.
  double achieved_snr_db = std::numeric_limits<double>::infinity();
};

/// Named experiment layouts: "paper-3rd" (1000x100x100), "paper-4th"
/// (1000x100x100x5), "scaled-4th" (200x50x50x5), "toy" (20x10x10, two sources, no noise).
struct Preset {
  std::string name;
  Eigen::Index signal_length = 0;
  Eigen::Index sources = 0;
  std::vector<Eigen::Index> mixing_extents;
  double snr_db = 40.0;
  double stop_epsilon = 1e-8;
  double max_seconds = 180.0;
};

[[nodiscard]] Preset preset(std::string_view name);
[[nodiscard]] std::vector<std::string> preset_names();

/// The preset's spec with generated signals (the bundled asset for 1000-sample presets).
[[nodiscard]] SyntheticSpec make_spec(const Preset& p, std::uint64_t seed, double snr_db);

/// Throws ConfigError for an inconsistent spec.
[[nodiscard]] SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// t + sigma * max(0, z), z standard normal, with sigma set so the SNR is met
/// exactly. Throws DataError for a zero or negative tensor.
[[nodiscard]] DenseTensor add_nonnegative_gaussian_noise(const DenseTensor& t, double snr_db, std::uint64_t seed);

[[nodiscard]] double snr_db(const DenseTensor& clean, const DenseTensor& noisy);

struct ExperimentGrid {
  std::vector<Method> methods;
  /// Shared by all modes within a run.
  std::vector<double> betas;
  std::size_t repeats = 1;
  /// Template for every run; method, beta and rng_seed are overwritten.
  SolverConfig base;
  std::uint64_t base_seed = 0;
  std::size_t workers = 1;
  /// Mode compared against the ground-truth signals.
  std::size_t signal_mode = 0;
  double threshold = 1e-3;
  /// Replay support: when non-empty, one entry per cell in record order; each
  /// cell then runs exactly that many sweeps with no time limit.
  std::vector<std::size_t> pinned_iterations;

  void validate(std::size_t order) const;
};

struct RunRecord {
  Method method = Method::ANLS_BPP;
  double beta = 0.0;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double rel_err = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  std::size_t iterations = 0;
  Termination termination = Termination::max_iters;
  double sparsity = std::numeric_limits<double>::quiet_NaN();
  Eigen::Index components = 0;
  double psnr_db = std::numeric_limits<double>::quiet_NaN();
};

struct AggregateRow {
  Method method = Method::ANLS_BPP;
  double beta = 0.0;
  std::size_t runs = 0;
  std::size_t failures = 0;
  double objective = 0.0;
  double rel_err = 0.0;
  double seconds = 0.0;
  double iterations = 0.0;
  double sparsity = 0.0;
  double components = 0.0;
  /// Finite per-run PSNR values in repeat order.
  std::vector<double> psnr_samples;
};

struct GridResult {
  /// Ordered by method, then beta, then repeat, as listed in the grid.
  std::vector<RunRecord> records;
  std::vector<AggregateRow> aggregates;
};

/// Runs a single cell and scores its signal-mode factor against `reference`
/// (the ground truth of that mode). Solver and data errors are captured in the record.
[[nodiscard]] RunRecord run_cell(const DenseTensor& x, const Matrix& reference, const ExperimentGrid& grid, Method method,
                                 double beta, std::size_t repeat);

/// Every (method, beta, repeat) cell; repeat r starts every method from the
/// same seed split_seed(base_seed, r). Cells may run on `workers` threads;
/// results do not depend on the worker count.
/// Throws ShapeError when `reference` does not have the signal mode's extent.
[[nodiscard]] GridResult run_grid(const DenseTensor& x, const Matrix& reference, const ExperimentGrid& grid,
                                  const std::function<void(const RunRecord&)>& on_record = {});

/// Means over the successful runs of each (method, beta), summed in repeat order.
[[nodiscard]] std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records);

/// `method,beta,repeat,seed,objective,rel_err,seconds,iters,sparsity,components,psnr_db,status`
void write_records_csv(std::ostream& out, const std::vector<RunRecord>& records);
/// `method,beta,runs,failures,objective,rel_err,seconds,iters,sparsity,components,psnr_db`
void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows);

}  // namespace sncp
