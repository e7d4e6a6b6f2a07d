#include <doctest.h>

#include <random>

#include "rcl/error.hpp"
#include "rcl/graph.hpp"
#include "rcl/verify.hpp"

using namespace rcl;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape) {
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

}  // namespace

TEST_CASE("gradient of sum is ones") {
  Graph g;
  const Var p = g.leaf("p", Tensor({2, 3}, 0.7));
  g.set_output(g.sum(p));
  const TensorMap grads = g.gradient();
  CHECK(grads.at("p").bit_equal(Tensor({2, 3}, 1.0)));
}

TEST_CASE("gradient of p*p at 3 is 6") {
  Graph g;
  const Var p = g.leaf("p", Tensor::scalar(3.0));
  g.set_output(g.mul(p, p));
  CHECK(g.gradient().at("p").item() == 6.0);
}

TEST_CASE("unused leaves get zero gradients") {
  Graph g;
  const Var p = g.leaf("p", Tensor::scalar(2.0));
  g.leaf("unused", Tensor({3}, 4.0));
  g.set_output(g.square(p));
  const TensorMap grads = g.gradient();
  CHECK(grads.at("unused").bit_equal(Tensor({3}, 0.0)));
  CHECK(grads.at("p").item() == 4.0);
}

TEST_CASE("non-scalar output is rejected") {
  Graph g;
  g.set_output(g.leaf("p", Tensor({2}, 1.0)));
  CHECK_THROWS_AS(g.gradient(), ShapeError);
}

TEST_CASE("duplicate leaf names are rejected") {
  Graph g;
  g.leaf("p", Tensor::scalar(1.0));
  CHECK_THROWS(g.leaf("p", Tensor::scalar(2.0)));
}

TEST_CASE("evaluation is deterministic and forward tracks set_leaf") {
  std::mt19937_64 rng(1);
  Graph g;
  const Var x = g.leaf("x", random_tensor(rng, {3, 4}));
  const Var w = g.leaf("w", random_tensor(rng, {4, 2}));
  const Var out = g.sum(g.silu(g.matmul(x, w)));
  g.set_output(out);
  const Tensor first = g.value(out);
  g.forward();
  CHECK(g.value(out).bit_equal(first));
  g.set_leaf("w", Tensor({4, 2}, 0.0));
  g.forward();
  CHECK(g.value(out).item() == 0.0);
  CHECK_THROWS_AS(g.set_leaf("w", Tensor({2, 4}, 0.0)), ShapeError);
}

TEST_CASE("info_nce with equal similarities") {
  Graph g;
  const Var s = g.leaf("s", Tensor({2, 3}, 0.4));
  const Tensor v = g.value(g.info_nce(s, 2, 0.1));
  CHECK(v[0] == doctest::Approx(std::log(1.5)).epsilon(1e-14));
  CHECK(v[1] == doctest::Approx(std::log(1.5)).epsilon(1e-14));
}

TEST_CASE("layer_norm normalizes rows") {
  Graph g;
  const Var x = g.leaf("x", Tensor::from_rows({{1, 2, 3, 4}, {-2, 0, 2, 10}}));
  const Tensor y = g.value(g.layer_norm(x, g.constant(Tensor({4}, 1.0)), g.constant(Tensor({4}, 0.0))));
  for (std::size_t r = 0; r < 2; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < 4; ++j) m += y[r * 4 + j] / 4.0;
    for (std::size_t j = 0; j < 4; ++j) v += (y[r * 4 + j] - m) * (y[r * 4 + j] - m) / 4.0;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("causal_conv reads only past inputs") {
  Graph g;
  Tensor x({1, 5, 1});
  for (std::size_t t = 0; t < 5; ++t) x[t] = static_cast<double>(t + 1);
  // taps (w0, w1, w2) read steps t-2, t-1, t
  const Tensor y = g.value(g.causal_conv(g.constant(x), g.constant(Tensor({1, 3}, std::vector<double>{100, 10, 1})),
                                         g.constant(Tensor({1}, 0.0))));
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 12.0);
  CHECK(y[2] == 123.0);
  CHECK(y[4] == 345.0);
}

TEST_CASE("quadratic loss passes the finite-difference check") {
  std::mt19937_64 rng(5);
  Graph g;
  const Var p = g.leaf("p", random_tensor(rng, {4, 5}));
  g.set_output(g.scale(g.sum(g.square(p)), 0.5));
  CHECK(finite_diff_check(g).max_rel_error < 1e-10);
}

TEST_CASE("every primitive passes the finite-difference check") {
  const SuiteReport rep = run_grad_suite(21);
  for (const auto& c : rep.checks) {
    INFO(c.name << " error " << c.value);
    CHECK(c.passed);
  }
}
