#pragma once

#include <random>
#include <span>
#include <vector>

#include "rcl/graph.hpp"
#include "rcl/tensor.hpp"

namespace rcl {

// Per-copy noise standard deviations for repeated steps. sigmas[0] is the
// clean copy and must be 0; the list is non-decreasing.
struct NoiseLadder {
  std::vector<double> sigmas{0.0, 1e-3, 1e-2};

  std::size_t repeats() const { return sigmas.size(); }
  void validate() const;

  // [0, first, 2*first, 4*first, ...] with n_t entries.
  static NoiseLadder doubling(double first, std::size_t n_t);
};

struct AugmentedBatch {
  Tensor original;   // [B, T, F]
  Tensor augmented;  // [B, n_t*T, F]
  std::size_t n_t = 0;
};

// Each step i becomes n_t consecutive copies; copy k carries N(0, sigmas[k]^2)
// noise. Draw order: batch, step, copy, feature.
AugmentedBatch repeat_augment(const Tensor& x, const NoiseLadder& ladder, std::mt19937_64& rng);

// Keeps copy 0 of every step.
Tensor strip_repeats(const Tensor& augmented, std::size_t n_t);

double cosine_sim(std::span<const double> a, std::span<const double> b);

// Graph builders. h: [B, s, D]; h_aug: [B, n_t*s, D]. Both return the mean
// over anchors and batch as a scalar node.
Var intra_loss(Graph& g, Var h_aug, std::size_t n_t, double tau);
Var inter_loss(Graph& g, Var h, Var h_aug, std::size_t n_t, double tau);

struct RclLossNodes {
  Var intra;
  Var inter;
  Var total;
};
RclLossNodes rcl_loss(Graph& g, Var h, Var h_aug, std::size_t n_t, double tau);

// Value-level forms of the same losses.
double intra_loss(const Tensor& h_aug, std::size_t n_t, double tau);
double inter_loss(const Tensor& h, const Tensor& h_aug, std::size_t n_t, double tau);
double rcl_loss(const Tensor& h, const Tensor& h_aug, std::size_t n_t, double tau);

}  // namespace rcl
