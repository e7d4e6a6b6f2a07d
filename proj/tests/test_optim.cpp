#include <doctest.h>

#include <cmath>

#include "rcl/optim.hpp"

using namespace rcl;

TEST_CASE("first Adam step moves each coordinate by lr against the gradient sign") {
  TensorMap p{{"w", Tensor({3}, std::vector<double>{1.0, -2.0, 0.5})}};
  const TensorMap g{{"w", Tensor({3}, std::vector<double>{0.3, -4.0, 0.0})}};
  Adam opt({.lr = 0.01});
  opt.step(p, g);
  CHECK(p.at("w")[0] == doctest::Approx(0.99).epsilon(1e-7));
  CHECK(p.at("w")[1] == doctest::Approx(-1.99).epsilon(1e-7));
  CHECK(p.at("w")[2] == 0.5);
  CHECK(opt.steps() == 1);
}

TEST_CASE("decoupled weight decay shrinks parameters with zero gradient") {
  TensorMap p{{"w", Tensor({1}, 2.0)}};
  const TensorMap g{{"w", Tensor({1}, 0.0)}};
  Adam opt({.lr = 0.1, .weight_decay = 0.5});
  opt.step(p, g);
  CHECK(p.at("w")[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-15));
}

TEST_CASE("frozen parameters are untouched") {
  TensorMap p{{"a", Tensor({2}, 1.0)}, {"b", Tensor({2}, 1.0)}};
  const TensorMap g{{"a", Tensor({2}, 1.0)}, {"b", Tensor({2}, 1.0)}};
  Adam opt({.lr = 0.1, .weight_decay = 0.1});
  for (int i = 0; i < 100; ++i) opt.step(p, g, {"a"});
  CHECK(p.at("a").bit_equal(Tensor({2}, 1.0)));
  CHECK(p.at("b")[0] < 1.0);
}

TEST_CASE("Adam minimizes a quadratic") {
  TensorMap p{{"x", Tensor({1}, 5.0)}};
  Adam opt({.lr = 0.1});
  for (int i = 0; i < 500; ++i) {
    const TensorMap g{{"x", Tensor({1}, 2.0 * (p.at("x")[0] - 1.0))}};
    opt.step(p, g);
  }
  CHECK(std::abs(p.at("x")[0] - 1.0) < 1e-2);
}
