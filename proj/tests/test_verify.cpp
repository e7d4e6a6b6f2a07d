#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rcl/verify.hpp"

using namespace rcl;

TEST_CASE("finite differences catch a corrupted gradient") {
  Graph g;
  const Var x = g.leaf("x", Tensor({4}, std::vector<double>{1.0, -2.0, 3.0, 1.5}));
  g.set_output(g.sum(g.mul(g.square(x), x)));
  CHECK(finite_diff_check(g).max_rel_error < 1e-8);

  TensorMap bad = g.gradient();
  for (auto& v : bad.at("x").data()) v *= 1.01;
  CHECK(finite_diff_check(g, {}, &bad).max_rel_error > 5e-3);
  CHECK(g.value(x)[1] == -2.0);
}

TEST_CASE("single-repetition closed form on a hand instance") {
  const AppendixCInstance inst{.h = 1.0, .x = 1.0, .x_next = 2.0, .sigma = 0.0};
  const auto [a, b] = appendix_c_stationary(inst);
  CHECK(b == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(a == doctest::Approx(-1.0).epsilon(1e-15));
  const AppendixCResult r = appendix_c_check(inst);
  CHECK(r.residual_a < 1e-12);
  CHECK(r.residual_b < 1e-12);
  CHECK(appendix_c_bound(inst) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(appendix_c_objective(inst, a, b) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(appendix_c_mi_lower_bound(inst) == doctest::Approx(-std::log1p(std::exp(2.0))).epsilon(1e-14));

  const auto [ra, rb] = appendix_c_root_search(inst, 0.5, -1.0);
  CHECK(std::abs(ra - a) < 1e-6);
  CHECK(std::abs(rb - b) < 1e-6);
}

TEST_CASE("oracle suites pass") {
  for (const SuiteReport& rep : {run_appendix_c_suite(3), run_scan_suite(4)}) {
    for (const auto& c : rep.checks) {
      INFO(rep.name << " " << c.name << " " << c.value);
      CHECK(c.passed);
    }
    CHECK(rep.passed());
  }
}

TEST_CASE("sigma sweep file") {
  const auto rows = sigma_sweep({.h = 0.8, .x = 0.5, .x_next = 1.2, .sigma = 0.0}, {0.0, 0.01, 0.1});
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].sigma == 0.01);
  const auto path = std::filesystem::temp_directory_path() / "rcl_sweep.csv";
  write_sigma_sweep(rows, path);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "sigma,bound,mi_lower_bound");
  int n = 0;
  while (std::getline(is, line)) ++n;
  CHECK(n == 3);
  std::filesystem::remove(path);
  CHECK(suites_to_json({run_scan_suite(1)}).find("\"passed\"") != std::string::npos);
}
