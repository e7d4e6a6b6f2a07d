#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "rcl/data.hpp"
#include "rcl/mamba.hpp"

namespace rcl {

struct ForecasterConfig {
  std::size_t n_layer = 4;
  MambaConfig mamba;
  std::size_t t_in = 96;
  std::size_t t_out = 96;
  std::size_t n_features = 1;

  void validate() const;
};

enum class FreezeMode { None, FrozenA };
// Which block arrays a transfer copies: everything, or only a_log, w_x and b_dt.
enum class TransferScope { AllArrays, Selective };

FreezeMode parse_freeze_mode(const std::string& s);
const char* freeze_mode_name(FreezeMode m);
TransferScope parse_transfer_scope(const std::string& s);
const char* transfer_scope_name(TransferScope s);

struct TransferPlan {
  double replace_fraction = 0.0;  // one of 0, 0.25, 0.5, 0.75, 1
  FreezeMode freeze = FreezeMode::None;
  TransferScope scope = TransferScope::AllArrays;

  void validate() const;
  // round(replace_fraction * n_layer); the replaced layers are the first ones.
  std::size_t replaced_layers(std::size_t n_layer) const;
};

// Residual stack of Mamba blocks with pre-normalization:
//   y = x.embed_w + embed_b;  y += block_l(LayerNorm_l(y)) for each layer;
//   out = ((y^T . time_w + time_b)^T) . feat_w + feat_b
// Parameter names: embed.{w,b}, blocks.<l>.norm.{scale,shift},
// blocks.<l>.<block field>, head.{time_w,time_b,feat_w,feat_b}.
struct Forecaster {
  ForecasterConfig cfg;
  TensorMap params;
  std::set<std::string> frozen;

  static std::string block_prefix(std::size_t layer);
  MambaParams block(std::size_t layer) const;
  void set_block(std::size_t layer, const MambaParams& p);

  // [B, t_in, F] -> [B, t_out, F]
  Tensor predict(const Tensor& x) const;

  struct LayerProbe {
    BlockTrace trace;
    Tensor block_out;  // [B, t_in, d_model], block output before the residual add
  };
  std::vector<LayerProbe> probe(const Tensor& x) const;

  bool bit_equal(const Forecaster& other) const;
};

struct ForecastNodes {
  Var pred;
  std::vector<Var> scans;
  std::vector<Var> block_outs;
};

// Registers every model parameter as a leaf and appends the forward pass.
ForecastNodes forecaster_graph(Graph& g, const Forecaster& model, Var x);

Forecaster build_forecaster(const ForecasterConfig& cfg, std::uint64_t seed);

// Copies pretrained block arrays into the first round(fraction * n_layer)
// blocks; with FrozenA their a_log is marked frozen. Everything else is untouched.
Forecaster transfer_params(Forecaster model, const MambaParams& pretrained, const TransferPlan& plan);

double mae(const Tensor& y, const Tensor& y_hat);
double mse(const Tensor& y, const Tensor& y_hat);

struct Metrics {
  double mae = 0.0;
  double mse = 0.0;
};

// Metrics over every element of every listed window (all windows when max_windows = 0,
// otherwise an evenly spaced subset of max_windows).
Metrics evaluate(const Forecaster& model, const WindowSet& windows, std::size_t batch_size = 32,
                 std::size_t max_windows = 0);

std::vector<std::size_t> spaced_indices(std::size_t total, std::size_t count);

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.0;
  std::size_t max_epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t max_train_batches = 0;  // per epoch; 0 = all
  std::size_t max_eval_windows = 0;   // validation subset; 0 = all
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_mae = 0.0;
  double val_mae = 0.0;
  double val_mse = 0.0;
};

struct TrainResult {
  Forecaster best;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  std::vector<EpochLog> log;
};

// Called after each epoch's validation pass with the current (not best) model.
using EpochHook = std::function<void(const EpochLog&, const Forecaster&)>;

// MAE objective, Adam, model selection at the minimal validation MAE.
TrainResult train_forecaster(Forecaster model, const WindowSet& train, const WindowSet& val,
                             const TrainConfig& cfg, const EpochHook& hook = {});

}  // namespace rcl
