#include "sncp/synthetic.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numbers>
#include <ostream>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "sncp/error.hpp"
#include "sncp/metrics.hpp"
#include "sncp/solvers.hpp"

namespace sncp {

namespace {

// Splits `total` into `parts` nonnegative integers (positive when min_each is 1).
std::vector<Eigen::Index> random_partition(std::mt19937_64& rng, Eigen::Index total, Eigen::Index parts,
                                           Eigen::Index min_each) {
  std::vector<Eigen::Index> out(static_cast<std::size_t>(parts), min_each);
  Eigen::Index rest = total - min_each * parts;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> w(out.size());
  double sum = 0.0;
  for (auto& v : w) sum += (v = unit(rng) + 1e-3);
  Eigen::Index assigned = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto share = static_cast<Eigen::Index>(std::floor(static_cast<double>(rest) * w[i] / sum));
    out[i] += share;
    assigned += share;
  }
  for (Eigen::Index i = 0; assigned < rest; ++i, ++assigned) ++out[static_cast<std::size_t>(i % parts)];
  return out;
}

double burst_shape(int kind, Eigen::Index j, Eigen::Index m) {
  const double u = static_cast<double>(j + 1) / static_cast<double>(m + 1);
  switch (kind) {
    case 0: return std::sin(std::numbers::pi * u);
    case 1: return 1.0;
    case 2: return u;
    default: return std::exp(-3.0 * static_cast<double>(j) / static_cast<double>(m));
  }
}

std::string csv_double(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

std::uint64_t split_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + (index + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Matrix generate_sparse_signals(Eigen::Index length, Eigen::Index channels, std::uint64_t seed) {
  if (length < 1 || channels < 1) throw ConfigError("signals: length and channel count must be >= 1");
  Matrix s = Matrix::Zero(length, channels);
  for (Eigen::Index c = 0; c < channels; ++c) {
    std::mt19937_64 rng(split_seed(seed, static_cast<std::uint64_t>(c)));
    std::uniform_real_distribution<double> zero_fraction(0.7, 0.9);
    std::uniform_real_distribution<double> amplitude(0.5, 1.5);
    std::uniform_int_distribution<int> burst_count(2, 5);
    std::uniform_int_distribution<int> kind(0, 3);
    const auto active = std::max<Eigen::Index>(
        1, static_cast<Eigen::Index>(std::lround((1.0 - zero_fraction(rng)) * static_cast<double>(length))));
    const Eigen::Index bursts = std::min<Eigen::Index>(burst_count(rng), active);
    const auto widths = random_partition(rng, active, bursts, 1);
    const auto gaps = random_partition(rng, length - active, bursts + 1, 0);
    Eigen::Index pos = 0;
    for (Eigen::Index b = 0; b < bursts; ++b) {
      pos += gaps[static_cast<std::size_t>(b)];
      const Eigen::Index m = widths[static_cast<std::size_t>(b)];
      const int shape = kind(rng);
      const double amp = amplitude(rng);
      for (Eigen::Index j = 0; j < m; ++j) s(pos + j, c) = amp * burst_shape(shape, j, m);
      pos += m;
    }
  }
  return s;
}

std::vector<std::string> preset_names() { return {"paper-3rd", "paper-4th", "scaled-4th", "toy"}; }

Preset preset(std::string_view name) {
  if (name == "paper-3rd") return {"paper-3rd", 1000, 10, {100, 100}, 40.0, 1e-8, 180.0};
  if (name == "paper-4th") return {"paper-4th", 1000, 10, {100, 100, 5}, 40.0, 1e-7, 1800.0};
  if (name == "scaled-4th") return {"scaled-4th", 200, 10, {50, 50, 5}, 40.0, 1e-7, 60.0};
  if (name == "toy") {
    return {"toy", 20, 2, {10, 10}, std::numeric_limits<double>::infinity(), 1e-12, 60.0};
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected paper-3rd, paper-4th, scaled-4th or toy)");
}

SyntheticSpec make_spec(const Preset& p, std::uint64_t seed, double snr) {
  return {generate_sparse_signals(p.signal_length, p.sources, kSignalAssetSeed), p.mixing_extents, snr, seed};
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.signals.size() == 0) throw ConfigError("synthetic: empty signal matrix");
  if (spec.mixing_extents.size() < 2) throw ConfigError("synthetic: need at least two mixing factors (order >= 3)");
  if ((spec.signals.array() < 0.0).any() || !spec.signals.allFinite()) {
    throw DataError("synthetic: signals must be finite and nonnegative");
  }
  if (!(spec.snr_db == spec.snr_db)) throw ConfigError("snr: must be a number");
  const Eigen::Index k = spec.signals.cols();
  std::mt19937_64 rng(split_seed(spec.rng_seed, 0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Matrix> factors{spec.signals};
  for (Eigen::Index extent : spec.mixing_extents) {
    if (extent < 1) throw ConfigError("synthetic: mixing extents must be >= 1");
    Matrix a(extent, k);
    for (Eigen::Index j = 0; j < k; ++j) {
      for (Eigen::Index i = 0; i < extent; ++i) a(i, j) = unit(rng);
    }
    factors.push_back(std::move(a));
  }
  SyntheticData out{DenseTensor(Shape{1}), FactorSet(std::move(factors)), std::numeric_limits<double>::infinity()};
  DenseTensor clean = kruskal_to_dense(out.truth);
  if (std::isinf(spec.snr_db) && spec.snr_db > 0) {
    out.tensor = std::move(clean);
  } else {
    out.tensor = add_nonnegative_gaussian_noise(clean, spec.snr_db, split_seed(spec.rng_seed, 1));
    out.achieved_snr_db = snr_db(clean, out.tensor);
  }
  return out;
}

DenseTensor add_nonnegative_gaussian_noise(const DenseTensor& t, double snr, std::uint64_t seed) {
  if (t.min_value() < 0.0) throw DataError("noise: tensor has negative entries");
  const double signal = t.squared_norm();
  if (!(signal > 0.0)) throw DataError("noise: SNR is undefined for a zero tensor");
  if (!std::isfinite(snr)) {
    if (snr > 0) return t;
    throw ConfigError("snr: must be finite or +inf");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> noise(t.size());
  double raw = 0.0;
  for (auto& v : noise) {
    v = std::max(0.0, normal(rng));
    raw += v * v;
  }
  if (!(raw > 0.0)) throw DataError("noise: degenerate draw");
  const double sigma = std::sqrt(signal / raw) * std::pow(10.0, -snr / 20.0);
  std::vector<double> data(t.data().begin(), t.data().end());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] += sigma * noise[i];
  return DenseTensor(t.shape(), std::move(data));
}

double snr_db(const DenseTensor& clean, const DenseTensor& noisy) {
  if (clean.shape() != noisy.shape()) throw ShapeError("snr: shapes differ");
  double noise = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double d = noisy.data()[i] - clean.data()[i];
    noise += d * d;
  }
  if (noise == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(clean.squared_norm() / noise);
}

void ExperimentGrid::validate(std::size_t order) const {
  if (methods.empty()) throw ConfigError("methods: at least one method is required");
  if (betas.empty()) throw ConfigError("betas: at least one value is required");
  for (double b : betas) {
    if (!(b >= 0.0) || !std::isfinite(b)) throw ConfigError("betas: values must be finite and >= 0");
  }
  if (repeats < 1) throw ConfigError("repeats: must be >= 1");
  if (workers < 1) throw ConfigError("workers: must be >= 1");
  if (signal_mode >= order) throw ConfigError("signal-mode: out of range for the tensor order");
  if (!(threshold > 0.0)) throw ConfigError("threshold: must be > 0");
  if (!pinned_iterations.empty() && pinned_iterations.size() != methods.size() * betas.size() * repeats) {
    throw ConfigError("pinned iterations: expected one entry per grid cell");
  }
  SolverConfig probe = base;
  probe.beta = {0.0};
  probe.validate(order);
}

RunRecord run_cell(const DenseTensor& x, const Matrix& reference, const ExperimentGrid& grid, Method method, double beta,
                   std::size_t repeat) {
  RunRecord rec;
  rec.method = method;
  rec.beta = beta;
  rec.repeat = repeat;
  rec.seed = split_seed(grid.base_seed, repeat);
  SolverConfig cfg = grid.base;
  cfg.method = method;
  cfg.beta = {beta};
  cfg.rng_seed = rec.seed;
  try {
    const DecompositionResult r = decompose(x, cfg);
    const IterationTrace& last = r.trace.back();
    rec.objective = last.objective;
    rec.rel_err = last.rel_err;
    rec.seconds = r.wall_seconds;
    rec.iterations = r.iterations;
    rec.termination = r.termination;
    const Matrix& signal = r.factors[grid.signal_mode];
    rec.sparsity = sparsity_level(signal, grid.threshold);
    const auto cols = nonzero_component_indices(signal, grid.threshold);
    rec.components = static_cast<Eigen::Index>(cols.size());
    if (!cols.empty()) rec.psnr_db = psnr(select_columns(signal, cols), reference).psnr_db;
  } catch (const Error& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

GridResult run_grid(const DenseTensor& x, const Matrix& reference, const ExperimentGrid& grid,
                    const std::function<void(const RunRecord&)>& on_record) {
  grid.validate(x.order());
  if (reference.rows() != static_cast<Eigen::Index>(x.extent(grid.signal_mode))) {
    throw ShapeError("reference signals have " + std::to_string(reference.rows()) + " rows, signal mode has extent " +
                     std::to_string(x.extent(grid.signal_mode)));
  }
  struct Cell {
    Method method;
    double beta;
    std::size_t repeat;
  };
  std::vector<Cell> cells;
  for (Method m : grid.methods) {
    for (double b : grid.betas) {
      for (std::size_t r = 0; r < grid.repeats; ++r) cells.push_back({m, b, r});
    }
  }
  GridResult out;
  out.records.resize(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex report_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      if (grid.pinned_iterations.empty()) {
        out.records[i] = run_cell(x, reference, grid, cells[i].method, cells[i].beta, cells[i].repeat);
      } else {
        ExperimentGrid pinned = grid;
        pinned.base.max_iters = grid.pinned_iterations[i];
        pinned.base.max_seconds = std::numeric_limits<double>::infinity();
        out.records[i] = run_cell(x, reference, pinned, cells[i].method, cells[i].beta, cells[i].repeat);
      }
      if (on_record) {
        std::lock_guard lock(report_mutex);
        on_record(out.records[i]);
      }
    }
  };
  const std::size_t n_threads = std::min(grid.workers, cells.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  out.aggregates = aggregate(out.records);
  return out;
}

std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records) {
  std::vector<AggregateRow> rows;
  for (const auto& rec : records) {
    auto it = std::find_if(rows.begin(), rows.end(),
                           [&](const AggregateRow& r) { return r.method == rec.method && r.beta == rec.beta; });
    if (it == rows.end()) {
      rows.push_back({});
      it = rows.end() - 1;
      it->method = rec.method;
      it->beta = rec.beta;
    }
  }
  for (auto& row : rows) {
    std::vector<const RunRecord*> mine;
    for (const auto& rec : records) {
      if (rec.method == row.method && rec.beta == row.beta) mine.push_back(&rec);
    }
    std::stable_sort(mine.begin(), mine.end(), [](auto* a, auto* b) { return a->repeat < b->repeat; });
    for (const RunRecord* rec : mine) {
      if (!rec->ok) {
        ++row.failures;
        continue;
      }
      ++row.runs;
      row.objective += rec->objective;
      row.rel_err += rec->rel_err;
      row.seconds += rec->seconds;
      row.iterations += static_cast<double>(rec->iterations);
      row.sparsity += rec->sparsity;
      row.components += static_cast<double>(rec->components);
      if (std::isfinite(rec->psnr_db)) row.psnr_samples.push_back(rec->psnr_db);
    }
    if (row.runs > 0) {
      const auto n = static_cast<double>(row.runs);
      row.objective /= n;
      row.rel_err /= n;
      row.seconds /= n;
      row.iterations /= n;
      row.sparsity /= n;
      row.components /= n;
    } else {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.objective = row.rel_err = row.seconds = row.iterations = row.sparsity = row.components = nan;
    }
  }
  return rows;
}

void write_records_csv(std::ostream& out, const std::vector<RunRecord>& records) {
  out << "method,beta,repeat,seed,objective,rel_err,seconds,iters,sparsity,components,psnr_db,status\n";
  for (const auto& r : records) {
    std::string status = r.ok ? std::string(to_string(r.termination)) : "error: " + r.error;
    std::replace(status.begin(), status.end(), '"', '\'');
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},\"{}\"\n", to_string(r.method), csv_double(r.beta), r.repeat,
                       r.seed, csv_double(r.objective), csv_double(r.rel_err), csv_double(r.seconds), r.iterations,
                       csv_double(r.sparsity), r.components, csv_double(r.psnr_db), status);
  }
}

void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows) {
  out << "method,beta,runs,failures,objective,rel_err,seconds,iters,sparsity,components,psnr_db\n";
  for (const auto& r : rows) {
    double psnr_mean = std::numeric_limits<double>::quiet_NaN();
    if (!r.psnr_samples.empty()) {
      psnr_mean = 0.0;
      for (double v : r.psnr_samples) psnr_mean += v;
      psnr_mean /= static_cast<double>(r.psnr_samples.size());
    }
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", to_string(r.method), csv_double(r.beta), r.runs,
                       r.failures, csv_double(r.objective), csv_double(r.rel_err), csv_double(r.seconds),
                       csv_double(r.iterations), csv_double(r.sparsity), csv_double(r.components),
                       csv_double(psnr_mean));
  }
}

}  // namespace sncp
