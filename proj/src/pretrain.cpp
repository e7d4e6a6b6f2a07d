#include "rcl/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "rcl/error.hpp"
#include "rcl/optim.hpp"
#include "rcl/util.hpp"

namespace rcl {

void PretrainConfig::validate() const {
  ladder.validate();
  if (!(tau > 0.0)) throw ConfigError("pretrain: tau must be positive");
  if (!(lr > 0.0)) throw ConfigError("pretrain: lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("pretrain: weight_decay must be non-negative");
  if (batch_size == 0) throw ConfigError("pretrain: batch_size must be positive");
}

TensorMap PretrainResult::to_map() const {
  TensorMap m;
  block.store(m, "block.");
  m.emplace("embed.w", embed_w);
  m.emplace("embed.b", embed_b);
  return m;
}

PretrainResult PretrainResult::from_map(const TensorMap& m, const MambaConfig& cfg) {
  PretrainResult r;
  r.block = MambaParams::load(m, "block.", cfg);
  auto w = m.find("embed.w");
  auto b = m.find("embed.b");
  if (w != m.end() && b != m.end()) {
    r.embed_w = w->second;
    r.embed_b = b->second;
  }
  return r;
}

PretrainGraph pretrain_graph(const MambaParams& block, const Tensor& embed_w, const Tensor& embed_b,
                             const MambaConfig& block_cfg, const AugmentedBatch& batch, double tau) {
  PretrainGraph pg;
  Graph& g = pg.graph;
  const BlockLeaves leaves = add_block_leaves(g, block, "block.");
  const Var ew = g.leaf("embed.w", embed_w);
  const Var eb = g.leaf("embed.b", embed_b);
  const Var x = g.add_bias(g.matmul(g.constant(batch.original), ew), eb);
  const Var x_aug = g.add_bias(g.matmul(g.constant(batch.augmented), ew), eb);
  const Var h = block_graph(g, leaves, x, block_cfg).out;
  const Var h_aug = block_graph(g, leaves, x_aug, block_cfg).out;
  pg.loss = rcl_loss(g, h, h_aug, batch.n_t, tau);
  g.set_output(pg.loss.total);
  return pg;
}

PretrainResult pretrain(const PretrainConfig& cfg, const MambaConfig& block_cfg, const Tensor& windows) {
  cfg.validate();
  block_cfg.validate();
  if (windows.rank() != 3 || windows.dim(1) < 2) {
    throw DataError("pretrain expects windows [M, T, F] with T >= 2, got " + shape_str(windows.shape()));
  }
  const std::size_t m = windows.dim(0), steps = windows.dim(1), f = windows.dim(2);

  PretrainResult res;
  res.block = init_params(block_cfg, cfg.seed);
  {
    std::mt19937_64 init_rng(cfg.seed ^ 0x5EEDE3BEDULL);
    const double bound = 1.0 / std::sqrt(static_cast<double>(f));
    std::uniform_real_distribution<double> dist(-bound, bound);
    res.embed_w = Tensor({f, block_cfg.d_model});
    for (auto& v : res.embed_w.data()) v = dist(init_rng);
    res.embed_b = Tensor({block_cfg.d_model});
    for (auto& v : res.embed_b.data()) v = dist(init_rng);
  }
  if (cfg.epochs == 0) return res;

  TensorMap params = res.to_map();
  Adam opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed ^ 0xA5A5A5A5ULL);
  std::vector<std::size_t> order(m);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_batches = (m + cfg.batch_size - 1) / cfg.batch_size;
    if (cfg.max_batches_per_epoch) n_batches = std::min(n_batches, cfg.max_batches_per_epoch);

    PretrainEpoch log{epoch, 0.0, 0.0, 0.0};
    for (std::size_t bi = 0; bi < n_batches; ++bi) {
      const std::size_t lo = bi * cfg.batch_size;
      const std::size_t hi = std::min(m, lo + cfg.batch_size);
      Tensor batch({hi - lo, steps, f});
      for (std::size_t k = lo; k < hi; ++k) {
        std::copy_n(&windows[order[k] * steps * f], steps * f, &batch[(k - lo) * steps * f]);
      }
      const AugmentedBatch aug = repeat_augment(batch, cfg.ladder, rng);
      const PretrainResult cur = PretrainResult::from_map(params, block_cfg);
      PretrainGraph pg = pretrain_graph(cur.block, cur.embed_w, cur.embed_b, block_cfg, aug, cfg.tau);
      const double total = pg.graph.value(pg.loss.total).item();
      if (!std::isfinite(total)) {
        throw NumericError("pretraining diverged: non-finite loss at epoch " + std::to_string(epoch));
      }
      log.intra += pg.graph.value(pg.loss.intra).item();
      log.inter += pg.graph.value(pg.loss.inter).item();
      log.total += total;
      opt.step(params, pg.graph.gradient());
    }
    const double nb = static_cast<double>(n_batches);
    log.intra /= nb;
    log.inter /= nb;
    log.total /= nb;
    res.history.push_back(log);
  }

  const PretrainResult fin = PretrainResult::from_map(params, block_cfg);
  res.block = fin.block;
  res.embed_w = fin.embed_w;
  res.embed_b = fin.embed_b;
  return res;
}

void write_loss_history(const std::vector<PretrainEpoch>& history, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write '" + path.string() + "'");
  os << "epoch,intra,inter,total\n";
  for (const auto& e : history) {
    os << e.epoch << ',' << fmt_double(e.intra) << ',' << fmt_double(e.inter) << ','
       << fmt_double(e.total) << '\n';
  }
}

}  // namespace rcl
