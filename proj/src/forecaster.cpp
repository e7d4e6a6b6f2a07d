#include "rcl/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rcl/error.hpp"
#include "rcl/optim.hpp"

namespace rcl {

void ForecasterConfig::validate() const {
  mamba.validate();
  if (n_layer == 0) throw ConfigError("forecaster: n_layer must be >= 1");
  if (t_in == 0 || t_out == 0) throw ConfigError("forecaster: t_in and t_out must be >= 1");
  if (n_features == 0) throw ConfigError("forecaster: n_features must be >= 1");
}

FreezeMode parse_freeze_mode(const std::string& s) {
  if (s == "none" || s == "None") return FreezeMode::None;
  if (s == "frozen-a" || s == "FrozenA") return FreezeMode::FrozenA;
  throw ConfigError("unknown freeze mode '" + s + "' (expected none or frozen-a)");
}

const char* freeze_mode_name(FreezeMode m) { return m == FreezeMode::None ? "none" : "frozen-a"; }

TransferScope parse_transfer_scope(const std::string& s) {
  if (s == "all") return TransferScope::AllArrays;
  if (s == "selective") return TransferScope::Selective;
  throw ConfigError("unknown transfer scope '" + s + "' (expected all or selective)");
}

const char* transfer_scope_name(TransferScope s) {
  return s == TransferScope::AllArrays ? "all" : "selective";
}

void TransferPlan::validate() const {
  static constexpr double allowed[] = {0.0, 0.25, 0.5, 0.75, 1.0};
  if (std::find(std::begin(allowed), std::end(allowed), replace_fraction) == std::end(allowed)) {
    throw ConfigError("replace fraction must be one of 0, 0.25, 0.5, 0.75, 1.0");
  }
}

std::size_t TransferPlan::replaced_layers(std::size_t n_layer) const {
  return static_cast<std::size_t>(std::lround(replace_fraction * static_cast<double>(n_layer)));
}

std::string Forecaster::block_prefix(std::size_t layer) {
  return "blocks." + std::to_string(layer) + ".";
}

MambaParams Forecaster::block(std::size_t layer) const {
  return MambaParams::load(params, block_prefix(layer), cfg.mamba);
}

void Forecaster::set_block(std::size_t layer, const MambaParams& p) {
  p.check_shapes(cfg.mamba);
  p.store(params, block_prefix(layer));
}

bool Forecaster::bit_equal(const Forecaster& other) const {
  if (params.size() != other.params.size() || frozen != other.frozen) return false;
  for (const auto& [name, t] : params) {
    auto it = other.params.find(name);
    if (it == other.params.end() || !t.bit_equal(it->second)) return false;
  }
  return true;
}

namespace {

Tensor uniform(std::mt19937_64& rng, Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

Forecaster build_forecaster(const ForecasterConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Forecaster m;
  m.cfg = cfg;
  const std::size_t dm = cfg.mamba.d_model;
  std::mt19937_64 rng(seed);
  m.params["embed.w"] = uniform(rng, {cfg.n_features, dm}, cfg.n_features);
  m.params["embed.b"] = uniform(rng, {dm}, cfg.n_features);
  for (std::size_t l = 0; l < cfg.n_layer; ++l) {
    const std::string pre = Forecaster::block_prefix(l);
    m.params[pre + "norm.scale"] = Tensor({dm}, 1.0);
    m.params[pre + "norm.shift"] = Tensor({dm}, 0.0);
    // Per-block seeds come from the model stream so layers differ.
    init_params(cfg.mamba, rng()).store(m.params, pre);
  }
  m.params["head.time_w"] = uniform(rng, {cfg.t_in, cfg.t_out}, cfg.t_in);
  m.params["head.time_b"] = uniform(rng, {cfg.t_out}, cfg.t_in);
  m.params["head.feat_w"] = uniform(rng, {dm, cfg.n_features}, dm);
  m.params["head.feat_b"] = uniform(rng, {cfg.n_features}, dm);
  return m;
}

ForecastNodes forecaster_graph(Graph& g, const Forecaster& model, Var x) {
  const auto& cfg = model.cfg;
  const Tensor& xv = g.value(x);
  if (xv.rank() != 3 || xv.dim(1) != cfg.t_in || xv.dim(2) != cfg.n_features) {
    throw ShapeError("forecaster input must be [B, " + std::to_string(cfg.t_in) + ", " +
                     std::to_string(cfg.n_features) + "], got " + shape_str(xv.shape()));
  }
  for (const auto& [name, t] : model.params) g.leaf(name, t);
  auto p = [&](const std::string& name) { return g.leaf_var(name); };

  ForecastNodes out;
  Var y = g.add_bias(g.matmul(x, p("embed.w")), p("embed.b"));
  for (std::size_t l = 0; l < cfg.n_layer; ++l) {
    const std::string pre = Forecaster::block_prefix(l);
    BlockLeaves bl{p(pre + "w_in"),  p(pre + "conv_w"), p(pre + "conv_b"),
                   p(pre + "w_x"),   p(pre + "w_dt"),   p(pre + "b_dt"),
                   p(pre + "a_log"), p(pre + "d_skip"), p(pre + "w_out")};
    const Var normed = g.layer_norm(y, p(pre + "norm.scale"), p(pre + "norm.shift"));
    const BlockNodes bn = block_graph(g, bl, normed, cfg.mamba);
    out.scans.push_back(bn.scan);
    out.block_outs.push_back(bn.out);
    y = g.add(y, bn.out);
  }
  Var t = g.add_bias(g.matmul(g.transpose12(y), p("head.time_w")), p("head.time_b"));
  out.pred = g.add_bias(g.matmul(g.transpose12(t), p("head.feat_w")), p("head.feat_b"));
  return out;
}

Tensor Forecaster::predict(const Tensor& x) const {
  Graph g;
  return g.value(forecaster_graph(g, *this, g.constant(x)).pred);
}

std::vector<Forecaster::LayerProbe> Forecaster::probe(const Tensor& x) const {
  Graph g;
  const ForecastNodes nodes = forecaster_graph(g, *this, g.constant(x));
  std::vector<LayerProbe> out;
  for (std::size_t l = 0; l < nodes.scans.size(); ++l) {
    out.push_back({extract_trace(g, nodes.scans[l]), g.value(nodes.block_outs[l])});
  }
  return out;
}

Forecaster transfer_params(Forecaster model, const MambaParams& pretrained, const TransferPlan& plan) {
  plan.validate();
  pretrained.check_shapes(model.cfg.mamba);
  const std::size_t k = plan.replaced_layers(model.cfg.n_layer);
  for (std::size_t l = 0; l < k; ++l) {
    const std::string pre = Forecaster::block_prefix(l);
    if (plan.scope == TransferScope::AllArrays) {
      model.set_block(l, pretrained);
    } else {
      model.params[pre + "a_log"] = pretrained.a_log;
      model.params[pre + "w_x"] = pretrained.w_x;
      model.params[pre + "b_dt"] = pretrained.b_dt;
    }
    if (plan.freeze == FreezeMode::FrozenA) model.frozen.insert(pre + "a_log");
  }
  return model;
}

double mae(const Tensor& y, const Tensor& y_hat) {
  if (!y.same_shape(y_hat)) {
    throw ShapeError("mae shape mismatch " + shape_str(y.shape()) + " vs " + shape_str(y_hat.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - y_hat[i]);
  return s / static_cast<double>(y.size());
}

double mse(const Tensor& y, const Tensor& y_hat) {
  if (!y.same_shape(y_hat)) {
    throw ShapeError("mse shape mismatch " + shape_str(y.shape()) + " vs " + shape_str(y_hat.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
  return s / static_cast<double>(y.size());
}

std::vector<std::size_t> spaced_indices(std::size_t total, std::size_t count) {
  std::vector<std::size_t> idx;
  if (count == 0 || count >= total) {
    idx.resize(total);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  for (std::size_t k = 0; k < count; ++k) idx.push_back(k * total / count);
  return idx;
}

Metrics evaluate(const Forecaster& model, const WindowSet& windows, std::size_t batch_size,
                 std::size_t max_windows) {
  if (windows.size() == 0) throw DataError("evaluate: empty window set");
  const auto idx = spaced_indices(windows.size(), max_windows);
  double abs_sum = 0.0, sq_sum = 0.0;
  std::size_t count = 0;
  for (std::size_t lo = 0; lo < idx.size(); lo += batch_size) {
    const std::vector<std::size_t> part(idx.begin() + lo, idx.begin() + std::min(idx.size(), lo + batch_size));
    const WindowSet b = windows.gather(part);
    const Tensor pred = model.predict(b.inputs);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double e = b.targets[i] - pred[i];
      abs_sum += std::abs(e);
      sq_sum += e * e;
    }
    count += pred.size();
  }
  return {abs_sum / static_cast<double>(count), sq_sum / static_cast<double>(count)};
}

TrainResult train_forecaster(Forecaster model, const WindowSet& train, const WindowSet& val,
                             const TrainConfig& cfg, const EpochHook& hook) {
  if (train.size() == 0 || val.size() == 0) throw DataError("train_forecaster: empty window set");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  TrainResult res{model, 0, {}};
  if (cfg.max_epochs == 0) return res;

  Adam opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  double best_val = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
    if (cfg.max_train_batches) n_batches = std::min(n_batches, cfg.max_train_batches);

    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < n_batches; ++bi) {
      const std::size_t lo = bi * cfg.batch_size;
      const std::vector<std::size_t> part(order.begin() + lo,
                                          order.begin() + std::min(order.size(), lo + cfg.batch_size));
      const WindowSet b = train.gather(part);
      Graph g;
      const Var pred = forecaster_graph(g, model, g.constant(b.inputs)).pred;
      const Var loss = g.mean(g.abs(g.sub(pred, g.constant(b.targets))));
      g.set_output(loss);
      const double lv = g.value(loss).item();
      if (!std::isfinite(lv)) {
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += lv;
      opt.step(model.params, g.gradient(), model.frozen);
    }

    const Metrics vm = evaluate(model, val, cfg.batch_size, cfg.max_eval_windows);
    EpochLog row{epoch, loss_sum / static_cast<double>(n_batches), vm.mae, vm.mse};
    res.log.push_back(row);
    if (vm.mae < best_val) {
      best_val = vm.mae;
      res.best = model;
      res.best_epoch = epoch;
    }
    if (hook) hook(row, model);
  }
  return res;
}

}  // namespace rcl
