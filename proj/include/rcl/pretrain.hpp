#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rcl/contrastive.hpp"
#include "rcl/mamba.hpp"

namespace rcl {

struct PretrainConfig {
  NoiseLadder ladder;  // n_t = ladder.repeats()
  double tau = 0.1;
  std::size_t epochs = 100;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  // 0 = every batch of the shuffled window set each epoch.
  std::size_t max_batches_per_epoch = 0;
  std::uint64_t seed = 0;

  std::size_t n_t() const { return ladder.repeats(); }
  void validate() const;
};

struct PretrainEpoch {
  std::size_t epoch = 0;
  double intra = 0.0;
  double inter = 0.0;
  double total = 0.0;
};

struct PretrainResult {
  MambaParams block;
  Tensor embed_w;  // [F, d_model]
  Tensor embed_b;  // [d_model]
  std::vector<PretrainEpoch> history;

  // Block arrays under "block.", embedding under "embed.".
  TensorMap to_map() const;
  static PretrainResult from_map(const TensorMap& m, const MambaConfig& cfg);
};

// Single-block contrastive pretraining. windows: [M, T, F] with T >= 2. Each
// step embeds a batch to d_model, augments it, runs both the clean and the
// augmented sequence through the same block and takes an Adam step on
// intra + inter loss. Throws NumericError naming the epoch on a non-finite loss.
PretrainResult pretrain(const PretrainConfig& cfg, const MambaConfig& block_cfg, const Tensor& windows);

// Loss of one batch at the given parameters; used by gradient checks.
struct PretrainGraph {
  Graph graph;
  RclLossNodes loss;
};
PretrainGraph pretrain_graph(const MambaParams& block, const Tensor& embed_w, const Tensor& embed_b,
                             const MambaConfig& block_cfg, const AugmentedBatch& batch, double tau);

void write_loss_history(const std::vector<PretrainEpoch>& history, const std::filesystem::path& path);

}  // namespace rcl
