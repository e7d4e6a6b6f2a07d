#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "rcl/data.hpp"
#include "rcl/forecaster.hpp"
#include "rcl/pretrain.hpp"

namespace rcl {

struct SynthConfig {
  SynthKind kind = SynthKind::MultiSine;
  std::size_t steps = 8000;
  std::size_t features = 4;
  double noise_std = 0.1;
};

// Run configuration file. Every section and key is optional; unknown keys are
// rejected with the dotted key path in the message.
//
//   {
//     "seed": 0,
//     "data": {"path": "etth1.csv"},
//     "synth": {"steps": 8000, "features": 4, "noise_std": 0.1},
//     "mamba": {"d_model": 16, "d_state": 16, "d_conv": 4, "expand": 2},
//     "pretrain": {"sigmas": [0, 0.001, 0.01], "tau": 0.1, "epochs": 100, "lr": 1e-4,
//                  "weight_decay": 1e-4, "batch_size": 32, "max_batches_per_epoch": 0,
//                  "window": 96},
//     "forecaster": {"n_layer": 4, "t_in": 96, "lr": 1e-4, "weight_decay": 0, "epochs": 100,
//                    "batch_size": 32, "max_train_batches": 0, "max_eval_windows": 0},
//     "transfer": {"replace": 0.5, "freeze": "none", "scope": "all"}
//   }
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_path;
  SynthConfig synth;
  MambaConfig mamba;
  PretrainConfig pretrain;
  std::size_t pretrain_window = 96;
  std::size_t n_layer = 4;
  std::size_t t_in = 96;
  TrainConfig train;
  TransferPlan transfer;

  // Forecaster shape for a given horizon and feature count.
  ForecasterConfig forecaster(std::size_t t_out, std::size_t n_features) const;
  // Canonical JSON text with every field filled in.
  std::string to_json() const;
  void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace rcl
