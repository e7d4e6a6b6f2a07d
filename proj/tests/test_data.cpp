#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rcl/data.hpp"
#include "rcl/error.hpp"

using namespace rcl;

namespace {

std::filesystem::path write_file(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

std::string ett_like(std::size_t rows) {
  std::string s = "date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n";
  for (std::size_t r = 0; r < rows; ++r) {
    s += "2016-07-01 " + std::to_string(r % 24) + ":00:00";
    for (int c = 0; c < 7; ++c) s += "," + std::to_string(std::sin(0.3 * r + c) * (c + 1) + 0.01 * r);
    s += "\n";
  }
  return s;
}

}  // namespace

TEST_CASE("split proportions and channel names") {
  Tensor rows({100, 2});
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = std::cos(0.1 * static_cast<double>(i));
  const DatasetSplit s = split_dataset(rows);
  CHECK(s.train.dim(0) == 60);
  CHECK(s.val.dim(0) == 20);
  CHECK(s.test.dim(0) == 20);
  CHECK(s.channels == std::vector<std::string>{"ch0", "ch1"});
  Tensor ramp({17, 1});
  for (std::size_t i = 0; i < 17; ++i) ramp[i] = static_cast<double>(i);
  const DatasetSplit odd = split_dataset(ramp);
  CHECK(odd.train.dim(0) == 10);
  CHECK(odd.val.dim(0) == 3);
  CHECK(odd.test.dim(0) == 4);
}

TEST_CASE("z-score uses the training rows only") {
  Tensor rows({100, 1});
  for (std::size_t i = 0; i < 60; ++i) rows[i] = 5.0 + (i % 2 ? 2.0 : -2.0);
  for (std::size_t i = 60; i < 100; ++i) rows[i] = 100.0;
  const DatasetSplit s = split_dataset(rows);
  CHECK(std::abs(s.scaler.mean[0] - 5.0) < 1e-12);
  CHECK(std::abs(s.scaler.std[0] - 2.0) < 1e-12);
  double m = 0.0, v = 0.0;
  for (double x : s.train.data()) m += x;
  m /= 60;
  for (double x : s.train.data()) v += (x - m) * (x - m);
  CHECK(std::abs(m) < 1e-12);
  CHECK(std::abs(std::sqrt(v / 60) - 1.0) < 1e-12);
  CHECK(s.test[0] == doctest::Approx(47.5).epsilon(1e-14));
  CHECK(s.scaler.invert(s.test)[0] == doctest::Approx(100.0).epsilon(1e-14));
  CHECK_THROWS_AS(split_dataset(Tensor({20, 1}, 3.0)), DataError);
  CHECK_THROWS_AS(split_dataset(Tensor({9, 1})), DataError);
}

TEST_CASE("load_csv reads an ETTh1-format file") {
  const auto p = write_file("rcl_ett.csv", ett_like(50));
  const DatasetSplit s = load_csv(p);
  CHECK(s.features() == 7);
  CHECK(s.channels.front() == "HUFL");
  CHECK(s.channels.back() == "OT");
  CHECK(s.train.dim(0) + s.val.dim(0) + s.test.dim(0) == 50);
  std::filesystem::remove(p);
}

TEST_CASE("load_csv errors name the row and column") {
  const auto bad = write_file("rcl_bad.csv", "t,a,b\n0,1,2\n1,3,x\n");
  try {
    load_csv(bad);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 3") != std::string::npos);
    CHECK(msg.find("column 3") != std::string::npos);
  }
  const auto short_file = write_file("rcl_short.csv", "t,a\n0,1\n1,2\n");
  CHECK_THROWS_AS(load_csv(short_file), DataError);
  CHECK_THROWS_AS(load_csv(std::filesystem::temp_directory_path() / "rcl_missing.csv"), DataError);
  std::filesystem::remove(bad);
  std::filesystem::remove(short_file);
}

TEST_CASE("windows follow the no-gap rule") {
  Tensor rows({5, 1}, std::vector<double>{0, 1, 2, 3, 4});
  const WindowSet w = make_windows(rows, 2, 2);
  CHECK(w.size() == 2);
  CHECK(w.inputs.at({0, 0, 0}) == 0.0);
  CHECK(w.inputs.at({0, 1, 0}) == 1.0);

  Tensor big({40, 3});
  for (std::size_t i = 0; i < big.size(); ++i) big[i] = static_cast<double>(i) * 0.5;
  const WindowSet v = make_windows(big, 7, 5);
  CHECK(v.size() == 40 - 7 - 5 + 1);
  for (std::size_t m = 0; m < v.size(); ++m)
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t f = 0; f < 3; ++f) CHECK(v.targets.at({m, t, f}) == big.at({m + 7 + t, f}));
  const WindowSet g = v.gather({3, 0});
  CHECK(g.inputs.at({0, 0, 1}) == big.at({3, 1}));
  CHECK(g.targets.at({1, 0, 0}) == big.at({7, 0}));
  CHECK_THROWS_AS(make_windows(rows, 3, 3), DataError);
}

TEST_CASE("synthetic corpora") {
  const Tensor a = synth_corpus(SynthKind::MultiSine, 2, 300, 3, 0.1, 5);
  CHECK(a.shape() == Shape{2, 300, 3});
  CHECK(a.bit_equal(synth_corpus(SynthKind::MultiSine, 2, 300, 3, 0.1, 5)));
  CHECK_FALSE(a.bit_equal(synth_corpus(SynthKind::MultiSine, 2, 300, 3, 0.1, 6)));

  const Tensor clean = synth_corpus(SynthKind::MultiSine, 1, 200, 2, 0.0, 3);
  for (std::size_t f = 0; f < 2; ++f) {
    const auto comps = multi_sine_components(f, 3);
    REQUIRE(comps.size() == 3);
    for (const auto& c : comps) CHECK(std::abs(c.at(17.0 + c.period) - c.at(17.0)) < 1e-9);
    for (std::size_t t = 0; t < 200; ++t) {
      double v = 0.0;
      for (const auto& c : comps) v += c.at(static_cast<double>(t));
      CHECK(clean.at({0, t, f}) == v);
    }
  }

  const Tensor ar = synth_corpus(SynthKind::Ar1Spikes, 1, 10000, 1, 0.0, 11);
  double m = 0.0;
  for (double v : ar.data()) m += v;
  m /= 10000;
  double c0 = 0.0, c1 = 0.0;
  for (std::size_t t = 0; t < 10000; ++t) {
    c0 += (ar[t] - m) * (ar[t] - m);
    if (t) c1 += (ar[t] - m) * (ar[t - 1] - m);
  }
  CHECK(std::abs(c1 / c0 - 0.9) < 0.03);

  CHECK(parse_synth_kind("ar1-with-spikes") == SynthKind::Ar1Spikes);
  CHECK(std::string(synth_kind_name(SynthKind::MultiSine)) == "multi-sine");
  CHECK_THROWS_AS(parse_synth_kind("square"), DataError);
}
