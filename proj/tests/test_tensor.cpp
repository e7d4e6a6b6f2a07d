#include <doctest.h>

#include <cmath>
#include <random>

#include "rcl/error.hpp"
#include "rcl/tensor.hpp"

using namespace rcl;

TEST_CASE("silu values and bounds") {
  CHECK(silu(0.0) == 0.0);
  CHECK(silu(1.0) == doctest::Approx(0.7310585786300049).epsilon(1e-15));
  const Tensor t({2, 3}, std::vector<double>{-3, -1, 0, 0.5, 2, 7});
  const Tensor s = silu(t);
  CHECK(s.shape() == Shape{2, 3});
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(s[i] > std::min(0.0, t[i]) - 1e-300);
    CHECK(s[i] <= std::max(0.0, t[i]));
  }
}

TEST_CASE("softplus is overflow safe and positive") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softplus(-1000.0) >= 0.0);
  CHECK(std::isfinite(softplus(-1000.0)));
  CHECK(softplus(50.0) == doctest::Approx(50.0 + std::log1p(std::exp(-50.0))).epsilon(1e-15));
  CHECK(std::isfinite(softplus(1e6)));
  for (double x : {-30.0, -5.0, -0.1, 0.0, 0.1, 5.0, 30.0}) CHECK(softplus(x) > 0.0);
}

TEST_CASE("matmul basics") {
  const Tensor id = Tensor::from_rows({{1, 0}, {0, 1}});
  const Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(id, m).bit_equal(m));
  CHECK(matmul(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{3}, {4}})).item() == 11.0);
}

TEST_CASE("matmul agrees with a j-outer implementation") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor a({5, 7}), b({7, 3});
  for (auto& v : a.data()) v = u(rng);
  for (auto& v : b.data()) v = u(rng);
  Tensor ref({5, 3});
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) s += a.at({i, k}) * b.at({k, j});
      ref.at({i, j}) = s;
    }
  CHECK(max_abs_diff(matmul(a, b), ref) < 1e-12);
}

TEST_CASE("matmul shape error names both shapes") {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 2}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("tensor construction and indexing") {
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor t({2, 3, 4});
  t.at({1, 2, 3}) = 5.0;
  CHECK(t[23] == 5.0);
  CHECK_THROWS_AS(t.at({2, 0, 0}), ShapeError);
  CHECK(t.reshaped({6, 4}).shape() == Shape{6, 4});
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
  CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("bit_equal distinguishes signed zero") {
  const Tensor a({1}, std::vector<double>{0.0});
  const Tensor b({1}, std::vector<double>{-0.0});
  CHECK_FALSE(a.bit_equal(b));
  CHECK(a.bit_equal(a));
}
