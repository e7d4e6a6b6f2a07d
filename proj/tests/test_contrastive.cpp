#include <doctest.h>

#include <cmath>
#include <random>

#include "rcl/contrastive.hpp"
#include "rcl/error.hpp"

using namespace rcl;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = n(rng);
  return t;
}

// One-sequence batch [1, rows, cols] from literal rows.
Tensor rows(std::initializer_list<std::initializer_list<double>> r) {
  const Tensor t = Tensor::from_rows(r);
  return t.reshaped({1, t.dim(0), t.dim(1)});
}

}  // namespace

TEST_CASE("cosine_sim examples") {
  const std::vector<double> a{1, 2, 3}, e0{1, 0}, e1{0, 1}, d{1, 1};
  CHECK(cosine_sim(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_sim(e0, e1) == 0.0);
  CHECK(cosine_sim(e0, d) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  const std::vector<double> z{0, 0};
  CHECK_THROWS_AS(cosine_sim(z, e0), NumericError);
}

TEST_CASE("repeat_augment shapes, clean copy and zero ladder") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(rng, {2, 4, 3});
  const AugmentedBatch zero = repeat_augment(x, NoiseLadder{{0, 0, 0}}, rng);
  CHECK(zero.augmented.shape() == Shape{2, 12, 3});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t f = 0; f < 3; ++f) CHECK(zero.augmented.at({b, i * 3 + k, f}) == x.at({b, i, f}));

  const AugmentedBatch noisy = repeat_augment(x, NoiseLadder{}, rng);
  CHECK(strip_repeats(noisy.augmented, 3).bit_equal(x));
}

TEST_CASE("repeat_augment noise statistics") {
  std::mt19937_64 rng(2);
  const std::size_t n = 100000;
  const Tensor x({1, n, 1}, 0.25);
  const NoiseLadder ladder{{0.0, 0.01, 0.02}};
  const AugmentedBatch aug = repeat_augment(x, ladder, rng);
  for (std::size_t k = 1; k < 3; ++k) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = aug.augmented[i * 3 + k] - 0.25;
      s += d;
      s2 += d * d;
    }
    const double mean = s / n;
    const double sd = std::sqrt(s2 / n - mean * mean);
    CHECK(std::abs(sd - ladder.sigmas[k]) < 0.05 * ladder.sigmas[k]);
  }
}

TEST_CASE("repeat_augment is reproducible and validates input") {
  std::mt19937_64 r1(7), r2(7);
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(rng, {2, 5, 2});
  CHECK(repeat_augment(x, NoiseLadder{}, r1).augmented.bit_equal(repeat_augment(x, NoiseLadder{}, r2).augmented));
  CHECK_THROWS_AS(repeat_augment(Tensor({1, 1, 2}), NoiseLadder{}, rng), ShapeError);
  CHECK_THROWS_AS(repeat_augment(x, NoiseLadder{{0.1, 0.2}}, rng), ConfigError);
  CHECK_THROWS_AS(repeat_augment(x, NoiseLadder{{0.0, 0.2, 0.1}}, rng), ConfigError);
  CHECK_THROWS_AS(repeat_augment(x, NoiseLadder{{0.0}}, rng), ConfigError);
}

TEST_CASE("noise ladder doubling") {
  const NoiseLadder l = NoiseLadder::doubling(1e-3, 5);
  CHECK(l.sigmas == std::vector<double>{0.0, 1e-3, 2e-3, 4e-3, 8e-3});
}

TEST_CASE("equal-similarity closed forms") {
  const Tensor h({2, 4, 3}, 1.0);
  const Tensor h_aug({2, 12, 3}, 1.0);
  CHECK(std::abs(intra_loss(h_aug, 3, 0.1) - std::log(1.5)) < 1e-9);
  CHECK(std::abs(inter_loss(h, h_aug, 3, 0.1) - std::log(4.0 / 3.0)) < 1e-9);
  CHECK(std::abs(rcl_loss(h, h_aug, 3, 0.1) - intra_loss(h_aug, 3, 0.1) - inter_loss(h, h_aug, 3, 0.1)) < 1e-15);
}

TEST_CASE("intra loss with n_t = 2, opposite negative") {
  // step 0: anchor e0, positive e0; step 1 clean copy -e0 is the negative
  const Tensor h_aug = rows({{1, 0}, {1, 0}, {-1, 0}, {-1, 0}});
  CHECK(intra_loss(h_aug, 2, 1.0) == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-14));
}

TEST_CASE("inter loss perfect case and large temperature") {
  const Tensor h = rows({{1, 0}, {-1, 0}});
  const Tensor h_aug = rows({{1, 0}, {1, 0}, {1, 0}, {-1, 0}, {-1, 0}, {-1, 0}});
  CHECK(inter_loss(h, h_aug, 3, 0.1) < 1e-8);
  CHECK(inter_loss(h, h_aug, 3, 1e9) == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-8));
}

TEST_CASE("lowering the negative similarity lowers both losses") {
  auto build = [](double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return std::pair{rows({{1, 0}, {c, s}}), rows({{1, 0}, {0.9, 0.1}, {0.8, 0.2}, {c, s}, {c, s}, {c, s}})};
  };
  double prev_intra = 1e9, prev_inter = 1e9;
  for (double angle : {0.2, 1.0, 2.0, 3.0}) {
    const auto [h, h_aug] = build(angle);
    const double a = intra_loss(h_aug, 3, 0.5), b = inter_loss(h, h_aug, 3, 0.5);
    CHECK(a < prev_intra);
    CHECK(b < prev_inter);
    prev_intra = a;
    prev_inter = b;
  }
}

TEST_CASE("losses are invariant to positive rescaling") {
  std::mt19937_64 rng(8);
  const Tensor h = random_tensor(rng, {2, 5, 4});
  const Tensor h_aug = random_tensor(rng, {2, 15, 4});
  Tensor h2 = h, a2 = h_aug;
  for (auto& v : h2.data()) v *= 3.7;
  for (auto& v : a2.data()) v *= 3.7;
  CHECK(rcl_loss(h2, a2, 3, 0.1) == doctest::Approx(rcl_loss(h, h_aug, 3, 0.1)).epsilon(1e-12));
  const double v = rcl_loss(h, h_aug, 3, 0.1);
  CHECK(std::isfinite(v));
  CHECK(v > 0.0);
}

TEST_CASE("graph and value forms agree") {
  std::mt19937_64 rng(9);
  const Tensor h = random_tensor(rng, {2, 4, 3});
  const Tensor h_aug = random_tensor(rng, {2, 12, 3});
  Graph g;
  const RclLossNodes n = rcl_loss(g, g.leaf("h", h), g.leaf("a", h_aug), 3, 0.2);
  CHECK(g.value(n.intra).item() == doctest::Approx(intra_loss(h_aug, 3, 0.2)).epsilon(1e-14));
  CHECK(g.value(n.inter).item() == doctest::Approx(inter_loss(h, h_aug, 3, 0.2)).epsilon(1e-14));
  CHECK(g.value(n.total).item() == doctest::Approx(rcl_loss(h, h_aug, 3, 0.2)).epsilon(1e-14));
}

TEST_CASE("loss preconditions") {
  CHECK_THROWS_AS(intra_loss(Tensor({1, 3, 2}, 1.0), 3, 0.1), ShapeError);
  CHECK_THROWS_AS(intra_loss(Tensor({1, 7, 2}, 1.0), 3, 0.1), ShapeError);
  CHECK_THROWS_AS(inter_loss(Tensor({1, 3, 2}, 1.0), Tensor({1, 6, 2}, 1.0), 3, 0.1), ShapeError);
}
