#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <sstream>

#include "sncp/error.hpp"
#include "sncp/synthetic.hpp"
#include "sncp/tensor_io.hpp"
#include "test_support.hpp"

using namespace sncp;
using namespace sncp::testing;

namespace {

ExperimentGrid toy_grid(std::vector<Method> methods, std::vector<double> betas, std::size_t repeats) {
  ExperimentGrid g;
  g.methods = std::move(methods);
  g.betas = std::move(betas);
  g.repeats = repeats;
  g.base.rank = 2;
  g.base.stop_epsilon = 1e-12;
  g.base.max_iters = 2000;
  g.base_seed = 5;
  return g;
}

}  // namespace

TEST_CASE("seed splitting gives distinct reproducible streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(split_seed(7, i));
  CHECK(seen.size() == 1000);
  CHECK(split_seed(7, 3) == split_seed(7, 3));
  CHECK(split_seed(7, 3) != split_seed(8, 3));
}

TEST_CASE("sparse signals are nonnegative, 70-90% zero and reproducible") {
  const Matrix s = generate_sparse_signals(1000, 10, kSignalAssetSeed);
  CHECK(s.rows() == 1000);
  CHECK(s.cols() == 10);
  CHECK(s.minCoeff() >= 0.0);
  for (Eigen::Index c = 0; c < s.cols(); ++c) {
    const double zeros = static_cast<double>((s.col(c).array() == 0.0).count()) / 1000.0;
    CHECK(zeros >= 0.7 - 1e-3);
    CHECK(zeros <= 0.9 + 1e-3);
  }
  CHECK(s == generate_sparse_signals(1000, 10, kSignalAssetSeed));
  CHECK_FALSE(s == generate_sparse_signals(1000, 10, kSignalAssetSeed + 1));
  // Distinct channels: no two sources are nearly collinear.
  const Matrix n = s.colwise().normalized();
  const Matrix c = n.transpose() * n;
  for (Eigen::Index i = 0; i < 10; ++i) {
    for (Eigen::Index j = i + 1; j < 10; ++j) CHECK(c(i, j) < 0.99);
  }
}

TEST_CASE("bundled signal asset matches the generator") {
  const Matrix asset = read_dnt_matrix(SNCP_SOURCE_DIR "/data/sparse_signals_1000x10.dnt");
  CHECK(asset == generate_sparse_signals(1000, 10, kSignalAssetSeed));
}

TEST_CASE("presets have the documented dimensions") {
  const Preset p3 = preset("paper-3rd");
  CHECK(p3.signal_length == 1000);
  CHECK(p3.mixing_extents == std::vector<Eigen::Index>{100, 100});
  CHECK(p3.snr_db == 40.0);
  const Preset p4 = preset("paper-4th");
  CHECK(p4.mixing_extents == std::vector<Eigen::Index>{100, 100, 5});
  CHECK(p4.stop_epsilon == 1e-7);
  CHECK(preset("scaled-4th").signal_length == 200);
  CHECK_THROWS_AS((void)preset("paper-5th"), ConfigError);
}

TEST_CASE("synthetic tensor layout and noise calibration") {
  Preset p = preset("scaled-4th");
  const SyntheticData d = generate_synthetic(make_spec(p, 3, 40.0));
  CHECK(d.tensor.shape() == Shape{200, 50, 50, 5});
  CHECK(d.truth.rank() == 10);
  CHECK(d.tensor.min_value() >= 0.0);
  CHECK(std::abs(d.achieved_snr_db - 40.0) <= 0.1);
  for (std::size_t n = 1; n < 4; ++n) {
    CHECK(d.truth[n].minCoeff() >= 0.0);
    CHECK(d.truth[n].maxCoeff() < 1.0);
  }
  const SyntheticData again = generate_synthetic(make_spec(p, 3, 40.0));
  CHECK(again.tensor == d.tensor);
  const SyntheticData other = generate_synthetic(make_spec(p, 4, 40.0));
  CHECK_FALSE(other.tensor == d.tensor);
}

TEST_CASE("noise at 40 dB is one percent of the signal norm") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const DenseTensor t = random_tensor(rng, random_shape(rng, 3, 20));
    const double snr = 10.0 + 10.0 * trial;
    const DenseTensor noisy = add_nonnegative_gaussian_noise(t, snr, 99);
    CHECK(std::abs(snr_db(t, noisy) - snr) <= 0.1);
    if (snr == 40.0) {
      double noise = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i) noise += std::pow(noisy.data()[i] - t.data()[i], 2);
      CHECK(std::abs(std::sqrt(noise / t.squared_norm()) - 1e-2) <= 1e-4);
    }
    CHECK(noisy.min_value() >= 0.0);
    CHECK(add_nonnegative_gaussian_noise(t, snr, 99) == noisy);
  }
  CHECK_THROWS_AS((void)add_nonnegative_gaussian_noise(DenseTensor(Shape{2, 2, 2}), 40.0, 1), DataError);
}

TEST_CASE("noise-free preset is exactly decomposable") {
  const SyntheticData d = generate_synthetic(make_spec(preset("toy"), 1, std::numeric_limits<double>::infinity()));
  CHECK(d.tensor == kruskal_to_dense(d.truth));
  CHECK(std::isinf(d.achieved_snr_db));
}

TEST_CASE("grid on the noiseless toy recovers the model") {
  const SyntheticData d = generate_synthetic(make_spec(preset("toy"), 1, std::numeric_limits<double>::infinity()));
  const auto g = toy_grid({Method::ANLS_BPP}, {0.0}, 1);
  const GridResult r = run_grid(d.tensor, d.truth[0], g);
  REQUIRE(r.records.size() == 1);
  REQUIRE(r.aggregates.size() == 1);
  CHECK(r.records[0].ok);
  CHECK(r.records[0].rel_err <= 1e-3);
  CHECK(r.records[0].components == 2);
  CHECK(r.records[0].psnr_db > 20.0);
}

TEST_CASE("grid records are deterministic and independent of the worker count") {
  const SyntheticData d = generate_synthetic(make_spec(preset("toy"), 2, 30.0));
  auto g = toy_grid({Method::HALS, Method::ANLS_AS, Method::MU}, {0.0, 0.5}, 3);
  g.base.max_iters = 50;
  const GridResult a = run_grid(d.tensor, d.truth[0], g);
  g.workers = 3;
  const GridResult b = run_grid(d.tensor, d.truth[0], g);
  REQUIRE(a.records.size() == 18);
  REQUIRE(a.aggregates.size() == 6);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].method == b.records[i].method);
    CHECK(a.records[i].beta == b.records[i].beta);
    CHECK(a.records[i].seed == b.records[i].seed);
    CHECK(a.records[i].objective == b.records[i].objective);
    CHECK(a.records[i].components == b.records[i].components);
  }
  // Every method of a repeat starts from the same seed.
  CHECK(a.records[0].seed == a.records[6].seed);
  CHECK(a.records[0].seed != a.records[1].seed);
}

TEST_CASE("aggregates are arithmetic means of successful runs") {
  std::vector<RunRecord> recs(4);
  for (std::size_t i = 0; i < 4; ++i) {
    recs[i].method = Method::APG;
    recs[i].beta = 0.5;
    recs[i].repeat = i;
    recs[i].objective = 1.0 + static_cast<double>(i);
    recs[i].rel_err = 0.1 * static_cast<double>(i);
    recs[i].seconds = 2.0;
    recs[i].iterations = 10 * (i + 1);
    recs[i].sparsity = 0.5;
    recs[i].components = static_cast<Eigen::Index>(i);
    recs[i].psnr_db = i == 2 ? std::numeric_limits<double>::quiet_NaN() : 10.0;
  }
  recs[3].ok = false;
  const auto rows = aggregate(recs);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].runs == 3);
  CHECK(rows[0].failures == 1);
  CHECK(rows[0].objective == (1.0 + 2.0 + 3.0) / 3.0);
  CHECK(rows[0].rel_err == (0.0 + 0.1 + 0.2) / 3.0);
  CHECK(rows[0].iterations == 20.0);
  CHECK(rows[0].components == 1.0);
  CHECK(rows[0].psnr_samples == std::vector<double>{10.0, 10.0});
}

TEST_CASE("failed cells are recorded, not fatal") {
  const SyntheticData d = generate_synthetic(make_spec(preset("toy"), 1, std::numeric_limits<double>::infinity()));
  // On a zero tensor the first ANLS update zeroes mode 1, leaving the next
  // subproblem with a zero gram; without alpha it has no unique solution.
  auto g = toy_grid({Method::ANLS_BPP}, {0.0}, 1);
  g.base.alpha = {0.0};
  const GridResult r = run_grid(DenseTensor(d.tensor.shape()), d.truth[0], g);
  REQUIRE(r.records.size() == 1);
  CHECK_FALSE(r.records[0].ok);
  CHECK(r.records[0].error.find("mode") != std::string::npos);
  CHECK(r.aggregates[0].failures == 1);

  std::ostringstream raw, agg;
  write_records_csv(raw, r.records);
  write_aggregate_csv(agg, r.aggregates);
  CHECK(raw.str().rfind("method,beta,repeat,seed,objective,rel_err,seconds,iters,sparsity,components,psnr_db,status\n", 0) == 0);
  CHECK(raw.str().find("\"error: ") != std::string::npos);
  CHECK(agg.str().rfind("method,beta,runs,failures,", 0) == 0);
}

TEST_CASE("grid validation") {
  const SyntheticData d = generate_synthetic(make_spec(preset("toy"), 1, std::numeric_limits<double>::infinity()));
  auto g = toy_grid({}, {0.0}, 1);
  CHECK_THROWS_AS((void)run_grid(d.tensor, d.truth[0], g), ConfigError);
  g = toy_grid({Method::MU}, {-1.0}, 1);
  CHECK_THROWS_AS((void)run_grid(d.tensor, d.truth[0], g), ConfigError);
  g = toy_grid({Method::MU}, {0.0}, 0);
  CHECK_THROWS_AS((void)run_grid(d.tensor, d.truth[0], g), ConfigError);
}
