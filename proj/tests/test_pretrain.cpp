#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rcl/data.hpp"
#include "rcl/error.hpp"
#include "rcl/param_io.hpp"
#include "rcl/pretrain.hpp"

using namespace rcl;

namespace {

// Windows of a two-sinusoid series, [M, T, 1].
Tensor two_sine_windows(std::size_t m, std::size_t t, double phase) {
  Tensor w({m, t, 1});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t s = 0; s < t; ++s) {
      const double x = static_cast<double>(i * 3 + s) + phase;
      w.at({i, s, 0}) = std::sin(2 * M_PI * x / 12.0) + 0.5 * std::sin(2 * M_PI * x / 7.3);
    }
  return w;
}

}  // namespace

TEST_CASE("zero epochs returns the initial parameters") {
  const MambaConfig bc{.d_model = 4, .d_state = 4};
  PretrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 5;
  const PretrainResult r = pretrain(cfg, bc, two_sine_windows(8, 6, 0.0));
  CHECK(r.block.bit_equal(init_params(bc, 5)));
  CHECK(r.history.empty());
}

TEST_CASE("pretraining is bit reproducible") {
  const MambaConfig bc{.d_model = 4, .d_state = 4};
  PretrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 9;
  const Tensor w = two_sine_windows(10, 8, 0.3);
  const PretrainResult a = pretrain(cfg, bc, w), b = pretrain(cfg, bc, w);
  REQUIRE(a.history.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(std::bit_cast<std::uint64_t>(a.history[e].total) == std::bit_cast<std::uint64_t>(b.history[e].total));
    CHECK(a.history[e].total == doctest::Approx(a.history[e].intra + a.history[e].inter).epsilon(1e-12));
  }
  CHECK(encode_params(a.to_map()) == encode_params(b.to_map()));
  cfg.seed = 10;
  CHECK_FALSE(pretrain(cfg, bc, w).block.bit_equal(a.block));
}

TEST_CASE("pretraining lowers the loss on a two-sinusoid corpus") {
  const MambaConfig bc{.d_model = 16, .d_state = 16};
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PretrainConfig cfg;
    cfg.epochs = 10;
    cfg.lr = 1e-3;
    cfg.batch_size = 16;
    cfg.seed = seed;
    const PretrainResult r = pretrain(cfg, bc, two_sine_windows(32, 32, static_cast<double>(seed)));
    if (r.history.back().total < r.history.front().total) ++improved;
  }
  CHECK(improved >= 4);
}

TEST_CASE("pretrain validates its inputs") {
  const MambaConfig bc{.d_model = 4, .d_state = 4};
  PretrainConfig cfg;
  CHECK_THROWS_AS(pretrain(cfg, bc, Tensor({4, 1, 1})), DataError);
  cfg.tau = 0.0;
  CHECK_THROWS_AS(pretrain(cfg, bc, two_sine_windows(4, 4, 0)), ConfigError);
}

TEST_CASE("result map round trip and loss history file") {
  const MambaConfig bc{.d_model = 4, .d_state = 4};
  PretrainConfig cfg;
  cfg.epochs = 2;
  const PretrainResult r = pretrain(cfg, bc, two_sine_windows(6, 5, 0.1));
  const PretrainResult back = PretrainResult::from_map(r.to_map(), bc);
  CHECK(back.block.bit_equal(r.block));
  CHECK(back.embed_w.bit_equal(r.embed_w));

  const auto path = std::filesystem::temp_directory_path() / "rcl_test_loss.csv";
  write_loss_history(r.history, path);
  std::ifstream is(path);
  std::string header, line;
  std::getline(is, header);
  CHECK(header == "epoch,intra,inter,total");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 2);
  std::filesystem::remove(path);
}
