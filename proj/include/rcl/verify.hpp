#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rcl/graph.hpp"

namespace rcl {

struct FdOptions {
  double eps = 1e-5;
  // Check every coordinate when the leaves hold at most this many; otherwise a
  // seeded subsample of this size (never fewer than 200).
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  std::string worst_leaf;
  std::size_t worst_index = 0;
};

// Central differences of the graph output against `analytic` (the graph's own
// reverse-mode gradient when null). Error per coordinate is
// |analytic - numeric| / max(1, |analytic|). Leaves are restored afterwards.
FdReport finite_diff_check(Graph& g, const FdOptions& opt = {}, const TensorMap* analytic = nullptr);

// Literal recurrence over explicitly stored per-step states; reference for selective_scan.
//   abar, bbar: [T, d_inner, d_state]; c: [T, d_state]; x: [T, d_inner]; d_skip: [d_inner]
Tensor brute_scan(const Tensor& abar, const Tensor& bbar, const Tensor& c, const Tensor& x,
                  const Tensor& d_skip);

// Single-repetition S4 analysis: anchor h, input x, next input x_next, noise sigma.
struct AppendixCInstance {
  double h = 1.0;
  double x = 0.0;
  double x_next = 0.0;
  double sigma = 0.0;

  double shifted() const { return x + sigma; }
};

// f(A, B) = (A^2 - A) h^2 + (AB - B)(x + sigma) h + B x_next h
double appendix_c_objective(const AppendixCInstance& inst, double a, double b);
// Closed-form stationary point.
std::pair<double, double> appendix_c_stationary(const AppendixCInstance& inst);
// ((x_next^2 - x_next (x + sigma)) / (x + sigma)^2) h^2
double appendix_c_bound(const AppendixCInstance& inst);
// -log(1 + exp(bound))
double appendix_c_mi_lower_bound(const AppendixCInstance& inst);

struct AppendixCResult {
  double a_star = 0.0;
  double b_star = 0.0;
  double residual_a = 0.0;   // |df/dA| at the closed form
  double residual_b = 0.0;   // |df/dB|
  double bound_match = 0.0;  // |f(A*, B*) - bound expression|
};

AppendixCResult appendix_c_check(const AppendixCInstance& inst);

// Newton iteration on the finite-difference gradient of f, independent of the
// closed forms.
std::pair<double, double> appendix_c_root_search(const AppendixCInstance& inst, double a0, double b0,
                                                 std::size_t max_iter = 50);

struct SigmaSweepRow {
  double sigma;
  double bound;
  double mi_lower_bound;
};

std::vector<SigmaSweepRow> sigma_sweep(AppendixCInstance inst, const std::vector<double>& sigmas);
void write_sigma_sweep(const std::vector<SigmaSweepRow>& rows, const std::filesystem::path& path);

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

struct SuiteReport {
  std::string name;
  std::vector<CheckResult> checks;

  bool passed() const;
};

// Gradient checks for every differentiable primitive, the block, the full
// contrastive loss through the block and the forecaster MAE loss.
SuiteReport run_grad_suite(std::uint64_t seed = 7);
// selective_scan and the fused graph scan against brute_scan on random instances.
SuiteReport run_scan_suite(std::uint64_t seed = 11);
// Stationarity, bound consistency and root search on random instances.
SuiteReport run_appendix_c_suite(std::uint64_t seed = 13);

std::string suites_to_json(const std::vector<SuiteReport>& suites);

}  // namespace rcl
