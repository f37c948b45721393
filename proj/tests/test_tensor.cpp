#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "sncp/error.hpp"
#include "sncp/tensor.hpp"
#include "sncp/tensor_io.hpp"
#include "test_support.hpp"

using namespace sncp;
using namespace sncp::testing;

TEST_CASE("unfold of a 2x2x2 tensor along mode 1") {
  DenseTensor t({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Matrix expected(2, 4);
  expected << 1, 3, 5, 7, 2, 4, 6, 8;
  CHECK(unfold(t, 0) == expected);
}

TEST_CASE("unfold matches the index-arithmetic oracle") {
  std::mt19937_64 rng(11);
  const auto t = random_tensor(rng, {3, 4, 5});
  for (std::size_t n = 0; n < 3; ++n) CHECK(unfold(t, n) == oracle_unfold(t, n));
}

TEST_CASE("fold inverts unfold for random tensors up to order 5") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t order = 1 + trial % 5;
    const auto t = random_tensor(rng, random_shape(rng, order, 5));
    for (std::size_t n = 0; n < order; ++n) {
      CHECK(fold(unfold(t, n), n, t.shape()) == t);
      CHECK(unfold(t, n) == oracle_unfold(t, n));
    }
  }
}

TEST_CASE("unfold rejects an out-of-range mode") {
  DenseTensor t({2, 2, 2});
  CHECK_THROWS_AS((void)unfold(t, 3), ShapeError);
}

TEST_CASE("khatri_rao small cases") {
  Matrix a(2, 1), b(2, 1);
  a << 1, 2;
  b << 3, 4;
  Matrix expected(4, 1);
  expected << 3, 4, 6, 8;
  CHECK(khatri_rao(std::vector<Matrix>{a, b}) == expected);

  const Matrix id = Matrix::Identity(2, 2);
  Matrix e(4, 2);
  e << 1, 0, 0, 0, 0, 0, 0, 1;
  CHECK(khatri_rao(std::vector<Matrix>{id, id}) == e);
}

TEST_CASE("khatri_rao matches the nested-loop oracle") {
  std::mt19937_64 rng(13);
  const Matrix a = random_matrix(rng, 3, 2);
  const Matrix b = random_matrix(rng, 4, 2);
  const Matrix c = random_matrix(rng, 2, 2);
  CHECK(khatri_rao(std::vector<Matrix>{a, b}) == oracle_kr2(a, b));
  CHECK(rel_diff(khatri_rao(std::vector<Matrix>{a, b, c}), oracle_kr2(oracle_kr2(a, b), c)) < 1e-15);
}

TEST_CASE("khatri_rao rejects mismatched column counts") {
  CHECK_THROWS_AS((void)khatri_rao(std::vector<Matrix>{Matrix::Ones(2, 2), Matrix::Ones(2, 3)}), ShapeError);
}

TEST_CASE("mttkrp of a zero tensor is zero") {
  std::mt19937_64 rng(14);
  DenseTensor t({3, 4, 2});
  const auto f = random_factors(rng, t.shape(), 3);
  for (std::size_t n = 0; n < 3; ++n) CHECK(mttkrp(t, f, n).isZero(0.0));
}

TEST_CASE("fused mttkrp equals unfold times Khatri-Rao") {
  std::mt19937_64 rng(15);
  {
    const auto t = random_tensor(rng, {4, 3, 5});
    const auto f = random_factors(rng, t.shape(), 2);
    for (std::size_t n = 0; n < 3; ++n) {
      const Matrix naive = oracle_unfold(t, n) * oracle_kr_excluding(f, n);
      CHECK(rel_diff(mttkrp(t, f, n), naive) < 1e-12);
    }
  }
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t order = 3 + trial % 3;
    const auto t = random_tensor(rng, random_shape(rng, order, 6));
    const auto f = random_factors(rng, t.shape(), 1 + trial % 4);
    for (std::size_t n = 0; n < order; ++n) {
      const Matrix naive = oracle_unfold(t, n) * oracle_kr_excluding(f, n);
      CHECK(rel_diff(mttkrp(t, f, n), naive) < 1e-12);
    }
  }
}

TEST_CASE("mttkrp from the first-mode partial equals unfold times Khatri-Rao") {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t order = 3 + trial % 3;
    const auto t = random_tensor(rng, random_shape(rng, order, 6));
    const auto f = random_factors(rng, t.shape(), 1 + trial % 4);
    const Matrix partial = first_mode_partial(t, f[0]);
    for (std::size_t n = 1; n < order; ++n) {
      const Matrix naive = oracle_unfold(t, n) * oracle_kr_excluding(f, n);
      CHECK(rel_diff(mttkrp_from_partial(partial, t.shape(), f, n), naive) < 1e-12);
    }
    CHECK_THROWS_AS((void)mttkrp_from_partial(partial, t.shape(), f, 0), ShapeError);
  }
  const auto t = random_tensor(rng, {3, 4, 5});
  const auto f = random_factors(rng, t.shape(), 2);
  CHECK_THROWS_AS((void)first_mode_partial(t, Matrix::Ones(4, 2)), ShapeError);
  CHECK_THROWS_AS((void)mttkrp_from_partial(Matrix::Ones(19, 2), t.shape(), f, 1), ShapeError);
}

TEST_CASE("mttkrp of an exact model equals factor times gram") {
  std::mt19937_64 rng(16);
  const auto f = random_factors(rng, {4, 5, 3}, 3);
  const auto t = oracle_kruskal(f);
  for (std::size_t n = 0; n < 3; ++n) {
    CHECK(rel_diff(mttkrp(t, f, n), f[n] * gram_excluding(f, n)) < 1e-12);
  }
}

TEST_CASE("mttkrp rejects inconsistent factors") {
  std::mt19937_64 rng(17);
  DenseTensor t({3, 4, 2});
  auto f = random_factors(rng, {3, 4, 3}, 2);
  CHECK_THROWS_AS((void)mttkrp(t, f, 0), ShapeError);
}

TEST_CASE("gram_excluding identities") {
  std::mt19937_64 rng(18);
  SUBCASE("orthonormal columns give the identity") {
    Matrix q = Eigen::HouseholderQR<Matrix>(random_matrix(rng, 5, 3)).householderQ() * Matrix::Identity(5, 3);
    FactorSet f({q, q, q});
    CHECK(gram_excluding(f, 1).isApprox(Matrix::Identity(3, 3), 1e-12));
  }
  SUBCASE("matches the explicit Khatri-Rao gram") {
    for (int trial = 0; trial < 10; ++trial) {
      const auto f = random_factors(rng, {4, 3, 5}, 3);
      for (std::size_t n = 0; n < 3; ++n) {
        const Matrix b = oracle_kr_excluding(f, n);
        CHECK(rel_diff(gram_excluding(f, n), b.transpose() * b) < 1e-10);
      }
    }
  }
  SUBCASE("an all-ones factor contributes the all-I matrix") {
    const Matrix ones = Matrix::Ones(4, 2);
    const Matrix other = random_matrix(rng, 3, 2);
    FactorSet f({random_matrix(rng, 5, 2), ones, other});
    const Matrix expected = Matrix::Constant(2, 2, 4.0).cwiseProduct(other.transpose() * other);
    CHECK(rel_diff(gram_excluding(f, 0), expected) < 1e-14);
    FactorSet only_ones({random_matrix(rng, 5, 2), ones});
    CHECK(gram_excluding(only_ones, 0) == Matrix::Constant(2, 2, 4.0));
  }
}

TEST_CASE("kruskal_to_dense") {
  std::mt19937_64 rng(19);
  SUBCASE("rank one of ones") {
    FactorSet f({Matrix::Ones(2, 1), Matrix::Ones(3, 1), Matrix::Ones(2, 1)});
    const auto t = kruskal_to_dense(f);
    for (double v : t.data()) CHECK(v == 1.0);
  }
  SUBCASE("matches the elementwise oracle") {
    const auto f = random_factors(rng, {3, 3, 3}, 2);
    const auto t = kruskal_to_dense(f);
    const auto o = oracle_kruskal(f);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t.data()[i] == doctest::Approx(o.data()[i]).epsilon(1e-14));
  }
  SUBCASE("unfolding commutes with the Kruskal form") {
    for (std::size_t order = 3; order <= 5; ++order) {
      const auto f = random_factors(rng, random_shape(rng, order, 4), 3);
      const auto t = kruskal_to_dense(f);
      for (std::size_t n = 0; n < order; ++n) {
        CHECK(rel_diff(unfold(t, n), f[n] * khatri_rao_excluding(f, n).transpose()) < 1e-13);
        CHECK(rel_diff(khatri_rao_excluding(f, n), oracle_kr_excluding(f, n)) < 1e-15);
      }
    }
  }
}

TEST_CASE("DenseTensor invariants") {
  CHECK_THROWS_AS(DenseTensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(DenseTensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(DenseTensor({1, 2}, {1.0, std::nan("")}), DataError);
  DenseTensor t({2, 3});
  const std::size_t idx[] = {1, 2};
  t.at(idx) = 4.0;
  CHECK(t.data()[5] == 4.0);
}

TEST_CASE("DNT1 layout is bit-exact") {
  DenseTensor t({2, 1, 2}, {1.0, -2.5, 0.0, 3.0});
  std::stringstream ss;
  write_dnt(ss, t);
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == 4 + 4 + 3 * 8 + 4 * 8);
  CHECK(bytes.substr(0, 4) == "DNT1");
  CHECK(bytes[4] == 3);
  CHECK(bytes[5] == 0);
  CHECK(bytes[8] == 2);
  CHECK(bytes[16] == 1);
  CHECK(bytes[24] == 2);
  // 1.0 = 0x3FF0000000000000, little-endian
  CHECK(static_cast<unsigned char>(bytes[32 + 7]) == 0x3F);
  CHECK(static_cast<unsigned char>(bytes[32 + 6]) == 0xF0);
  std::stringstream in(bytes);
  CHECK(read_dnt(in) == t);
}

TEST_CASE("DNT1 round trip for random tensors") {
  std::mt19937_64 rng(20);
  for (std::size_t order = 1; order <= 5; ++order) {
    const auto t = random_tensor(rng, random_shape(rng, order, 4), -1.0, 1.0);
    std::stringstream ss;
    write_dnt(ss, t);
    CHECK(read_dnt(ss) == t);
  }
}

TEST_CASE("DNT1 rejects malformed input") {
  std::stringstream bad_magic("DNT2xxxx");
  CHECK_THROWS_AS((void)read_dnt(bad_magic), DataError);

  DenseTensor t({2, 2}, {1, 2, 3, 4});
  std::stringstream ss;
  write_dnt(ss, t);
  std::string bytes = ss.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS((void)read_dnt(truncated), DataError);
  std::stringstream trailing(bytes + "x");
  CHECK_THROWS_AS((void)read_dnt(trailing), DataError);
  CHECK_THROWS_AS((void)read_dnt(std::filesystem::path("/nonexistent/x.dnt")), DataError);
}
