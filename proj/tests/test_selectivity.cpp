#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "rcl/error.hpp"
#include "rcl/mamba.hpp"
#include "rcl/selectivity.hpp"

using namespace rcl;

namespace {

// Trace of one sequence, one channel, two state dims; the rows are h_t and
// input_contrib_t per step.
BlockTrace tiny_trace(std::vector<std::array<double, 2>> h, std::vector<std::array<double, 2>> contrib) {
  const std::size_t T = h.size();
  BlockTrace tr{Tensor({1, 2}, -1.0), Tensor({1, T, 1, 2}), Tensor({1, T, 1}, 0.1), Tensor({1, T, 1, 2})};
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < 2; ++j) {
      tr.hidden[t * 2 + j] = h[t][j];
      tr.input_contrib[t * 2 + j] = contrib[t][j];
    }
  return tr;
}

BlockTrace random_trace(std::uint64_t seed, std::size_t B, std::size_t T) {
  const MambaConfig cfg{.d_model = 4, .d_state = 3};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor x({B, T, 4});
  for (auto& v : x.data()) v = n(rng);
  return *block_forward(init_params(cfg, seed), cfg, x, true).trace;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("classification thresholds") {
  const ClassCounts a = classify({0.8, 0.2, 0.5});
  CHECK(a.n_sm == 1);
  CHECK(a.n_si == 1);
  CHECK(a.n_nr == 1);
  const ClassCounts b = classify({0.7, 0.3});
  CHECK(b.n_sm == 0);
  CHECK(b.n_si == 0);
  CHECK(b.n_nr == 2);
  const ClassCounts e = classify({});
  CHECK(e.n_sm + e.n_si + e.n_nr == 0);
}

TEST_CASE("focus ratio") {
  CHECK(std::abs(focus_ratio(11897, 32789, 219889) - 0.1689) < 1e-4);
  CHECK(std::abs(focus_ratio(5641, 12875, 246059) - 0.0700) < 1e-4);
  CHECK(focus_ratio(0, 0, 10) == 0.0);
  CHECK_THROWS_AS(focus_ratio(0, 0, 0), NumericError);
  for (std::size_t k : {2u, 7u, 1000u})
    CHECK(focus_ratio(3 * k, 5 * k, 11 * k) == doctest::Approx(focus_ratio(3, 5, 11)).epsilon(1e-15));
}

TEST_CASE("memory entropy") {
  CHECK(memory_entropy({0.51, 0.52, 0.53}) == 0.0);
  std::vector<double> uniform;
  for (int k = 0; k < 20; ++k) uniform.push_back((k + 0.5) / 20.0);
  CHECK(memory_entropy(uniform) == doctest::Approx(std::log(20.0)).epsilon(1e-14));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> mc(10000);
  for (auto& v : mc) v = u(rng);
  CHECK(std::abs(memory_entropy(mc) - std::log(20.0)) < 0.05);
  std::vector<double> shuffled = mc;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(memory_entropy(shuffled) == memory_entropy(mc));
  CHECK(memory_entropy({1.0}) == 0.0);
  CHECK_THROWS_AS(memory_entropy({}), NumericError);
  CHECK_THROWS_AS(memory_entropy({1.5}), NumericError);
}

TEST_CASE("memory score edge cases") {
  // step 1: h = e0, input contribution e0, previous state e1
  CHECK(memory_scores(tiny_trace({{0, 1}, {1, 0}}, {{0, 1}, {1, 0}}))[0].scores[0] == 1.0);
  // step 1: h = e0, input contribution e1, previous state e0
  CHECK(memory_scores(tiny_trace({{1, 0}, {1, 0}}, {{1, 0}, {0, 1}}))[0].scores[0] == 0.0);
  CHECK(memory_scores(tiny_trace({{1, 0}, {0, 0}}, {{1, 0}, {0, 0}}))[0].scores[0] == 0.5);
  // equal angles give 1/2
  CHECK(memory_scores(tiny_trace({{1, 0}, {1, 1}}, {{1, 0}, {0, -1}}))[0].scores[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(memory_scores(tiny_trace({{1, 0}}, {{1, 0}})), ShapeError);
}

TEST_CASE("memory scores agree with a direct recomputation") {
  const BlockTrace tr = random_trace(3, 2, 12);
  const auto series = memory_scores(tr);
  const std::size_t T = tr.steps(), W = tr.d_inner() * tr.d_state();
  REQUIRE(series.size() == 2);
  for (std::size_t b = 0; b < 2; ++b) {
    REQUIRE(series[b].scores.size() == T - 1);
    for (std::size_t t = 1; t < T; ++t) {
      std::vector<double> h(W), hp(W), in(W);
      for (std::size_t k = 0; k < W; ++k) {
        h[k] = tr.hidden[(b * T + t) * W + k];
        hp[k] = tr.hidden[(b * T + t - 1) * W + k];
        in[k] = tr.input_contrib[(b * T + t) * W + k];
      }
      auto cosabs = [](const std::vector<double>& u, const std::vector<double>& v) {
        const double d = std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
        return std::abs(d) / std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0) *
                                       std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
      };
      const double ri = cosabs(h, in), rp = cosabs(h, hp);
      const double s = series[b].scores[t - 1];
      CHECK(s == doctest::Approx(ri / (ri + rp)).epsilon(1e-12));
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
    }
  }
}

TEST_CASE("selectivity report pools every sequence") {
  const std::vector<BlockTrace> traces{random_trace(1, 2, 10), random_trace(2, 3, 10)};
  const SelectivityReport rep = selectivity_report(traces);
  CHECK(rep.n_sm + rep.n_si + rep.n_nr == 5 * 9);
  CHECK(rep.scores.size() == 45);
  CHECK(rep.fr == focus_ratio(rep.n_sm, rep.n_si, rep.n_nr));
  CHECK(rep.me == memory_entropy(rep.scores));
  CHECK(rep.to_json().find("\"bins\": 20") != std::string::npos);
}

TEST_CASE("pearson") {
  const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<double> twice, neg;
  for (double v : x) {
    twice.push_back(2 * v);
    neg.push_back(-v);
  }
  CHECK(pearson(x, twice).r == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(x, neg).r == doctest::Approx(-1.0).epsilon(1e-15));

  // Reference values from scipy.stats.pearsonr.
  const PearsonResult a = pearson(x, {2.3, 1.9, 3.8, 4.1, 3.6, 6.2, 5.9, 7.7, 6.8, 9.4});
  CHECK(std::abs(a.r - 0.950824183952319) < 1e-10);
  CHECK(std::abs(a.p - 2.4105863437933047e-05) < 1e-10);
  const PearsonResult b = pearson(x, {0.5, -1.2, 0.3, 2.2, -0.7, 1.1, -0.4, 0.9, -1.5, 0.6});
  CHECK(std::abs(b.r - -0.0679536926242448) < 1e-10);
  CHECK(std::abs(b.p - 0.8520358134357767) < 1e-10);

  CHECK_THROWS_AS(pearson({1, 2}, {1, 2}), NumericError);
  CHECK_THROWS_AS(pearson({1, 2, 3}, {1, 1, 1}), NumericError);
  CHECK_THROWS_AS(pearson({1, 2, 3}, {1, 2}), ShapeError);
}

TEST_CASE("similarity heatmap") {
  const Tensor same = similarity_heatmap(Tensor({3, 2}, 1.5));
  for (double v : same.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
  const Tensor eye = similarity_heatmap(Tensor::from_rows({{2, 0, 0}, {0, 3, 0}, {0, 0, 1}}));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(eye.at({i, j}) == (i == j ? 1.0 : 0.0));

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor h({9, 4});
  for (auto& v : h.data()) v = n(rng);
  const Tensor m = similarity_heatmap(h);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(std::abs(m.at({i, i}) - 1.0) < 1e-12);
    for (std::size_t j = 0; j < 9; ++j) CHECK(std::abs(m.at({i, j}) - m.at({j, i})) < 1e-12);
  }
  CHECK_THROWS_AS(similarity_heatmap(Tensor::from_rows({{1, 0}, {0, 0}})), NumericError);
}

TEST_CASE("emit_traces schema, determinism and round trip") {
  const BlockTrace tr = random_trace(9, 2, 8);
  Tensor emb({2, 8, 3});
  for (std::size_t i = 0; i < emb.size(); ++i) emb[i] = std::sin(0.7 * static_cast<double>(i) + 0.1);
  Tensor emb1({8, 3});
  for (std::size_t i = 0; i < emb1.size(); ++i) emb1[i] = emb[24 + i];
  const auto dir = std::filesystem::temp_directory_path() / "rcl_test_traces";
  std::filesystem::remove_all(dir);
  const TraceFiles f = emit_traces(tr, emb, 1, dir);
  const std::string delta = slurp(f.delta), memory = slurp(f.memory), heat = slurp(f.heatmap);
  emit_traces(tr, emb, 1, dir);
  CHECK(slurp(f.delta) == delta);
  CHECK(slurp(f.memory) == memory);
  CHECK(slurp(f.heatmap) == heat);

  std::istringstream ds(delta);
  std::string line;
  std::getline(ds, line);
  CHECK(line == "t,delta_mean");
  std::size_t rows = 0;
  const std::size_t D = tr.d_inner();
  while (std::getline(ds, line)) {
    const auto comma = line.find(',');
    CHECK(std::stoul(line.substr(0, comma)) == rows);
    double expect = 0.0;
    for (std::size_t i = 0; i < D; ++i) expect += tr.delta[(8 + rows) * D + i];
    CHECK(std::abs(std::stod(line.substr(comma + 1)) - expect / static_cast<double>(D)) < 1e-12);
    ++rows;
  }
  CHECK(rows == 8);

  std::istringstream ms(memory);
  std::getline(ms, line);
  CHECK(line == "t,score,class");
  const auto scores = memory_scores(tr)[1].scores;
  rows = 0;
  while (std::getline(ms, line)) {
    std::istringstream ls(line);
    std::string t, s, c;
    std::getline(ls, t, ',');
    std::getline(ls, s, ',');
    std::getline(ls, c, ',');
    CHECK(std::stoul(t) == rows + 1);
    CHECK(std::abs(std::stod(s) - scores[rows]) < 1e-12);
    CHECK(c == memory_class_name(classify_score(scores[rows])));
    ++rows;
  }
  CHECK(rows == 7);

  const Tensor m = similarity_heatmap(emb1);
  std::istringstream hs(heat);
  rows = 0;
  while (std::getline(hs, line)) {
    std::istringstream ls(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ls, cell, ',')) {
      CHECK(std::abs(std::stod(cell) - m.at({rows, col})) < 1e-12);
      ++col;
    }
    CHECK(col == 8);
    ++rows;
  }
  CHECK(rows == 8);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(emit_traces(tr, emb, 2, dir), ShapeError);
}
