#include "rcl/contrastive.hpp"

#include <cmath>

#include "rcl/error.hpp"

namespace rcl {

void NoiseLadder::validate() const {
  if (sigmas.size() < 2) throw ConfigError("noise ladder needs at least two copies (n_t >= 2)");
  if (sigmas[0] != 0.0) throw ConfigError("noise ladder: the first copy must be clean (sigma 0)");
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    if (!(sigmas[k] >= 0.0) || !std::isfinite(sigmas[k])) {
      throw ConfigError("noise ladder: sigmas must be finite and non-negative");
    }
    if (k && sigmas[k] < sigmas[k - 1]) throw ConfigError("noise ladder must be non-decreasing");
  }
}

NoiseLadder NoiseLadder::doubling(double first, std::size_t n_t) {
  NoiseLadder l;
  l.sigmas.assign(n_t, 0.0);
  double s = first;
  for (std::size_t k = 1; k < n_t; ++k, s *= 2.0) l.sigmas[k] = s;
  l.validate();
  return l;
}

AugmentedBatch repeat_augment(const Tensor& x, const NoiseLadder& ladder, std::mt19937_64& rng) {
  ladder.validate();
  if (x.rank() != 3) throw ShapeError("repeat_augment expects [B, T, F], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), T = x.dim(1), F = x.dim(2), n_t = ladder.repeats();
  if (T < 2) throw ShapeError("repeat_augment needs T >= 2");

  AugmentedBatch out{x, Tensor({B, n_t * T, F}), n_t};
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < n_t; ++k) {
        const double sigma = ladder.sigmas[k];
        const double* src = &x[(b * T + t) * F];
        double* dst = &out.augmented[(b * n_t * T + t * n_t + k) * F];
        for (std::size_t f = 0; f < F; ++f) {
          dst[f] = src[f];
          if (k == 0) continue;
          const double noise = normal(rng);
          if (sigma != 0.0) dst[f] += sigma * noise;
        }
      }
  return out;
}

Tensor strip_repeats(const Tensor& augmented, std::size_t n_t) {
  if (augmented.rank() != 3 || n_t == 0 || augmented.dim(1) % n_t != 0) {
    throw ShapeError("strip_repeats: length not divisible by n_t");
  }
  const std::size_t B = augmented.dim(0), T = augmented.dim(1) / n_t, F = augmented.dim(2);
  Tensor out({B, T, F});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < F; ++f)
        out[(b * T + t) * F + f] = augmented[(b * n_t * T + t * n_t) * F + f];
  return out;
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_sim: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_sim: zero-norm vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

struct SeqDims {
  std::size_t batch, steps, width;
};

SeqDims aug_dims(const Tensor& h_aug, std::size_t n_t) {
  if (h_aug.rank() != 3) throw ShapeError("expected [B, n_t*s, D], got " + shape_str(h_aug.shape()));
  if (n_t < 2) throw ShapeError("n_t must be at least 2");
  if (h_aug.dim(1) % n_t != 0) {
    throw ShapeError("augmented length " + std::to_string(h_aug.dim(1)) +
                     " is not a multiple of n_t = " + std::to_string(n_t));
  }
  const std::size_t s = h_aug.dim(1) / n_t;
  if (s < 2) throw ShapeError("contrastive losses need s >= 2 steps");
  return {h_aug.dim(0), s, h_aug.dim(2)};
}

}  // namespace

Var intra_loss(Graph& g, Var h_aug, std::size_t n_t, double tau) {
  const SeqDims d = aug_dims(g.value(h_aug), n_t);
  const std::size_t len = n_t * d.steps;
  // Per anchor: n_t - 1 positives (same-step noisy copies), then the next step's clean copy.
  std::vector<RowPair> pairs;
  pairs.reserve(d.batch * (d.steps - 1) * n_t);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t i = 0; i + 1 < d.steps; ++i) {
      const RowRef anchor{0, b * len + i * n_t};
      for (std::size_t z = 1; z < n_t; ++z) pairs.push_back({anchor, {0, b * len + i * n_t + z}});
      pairs.push_back({anchor, {0, b * len + (i + 1) * n_t}});
    }
  const std::size_t groups = d.batch * (d.steps - 1);
  const Var sims = g.reshape(g.pair_cosine(h_aug, h_aug, std::move(pairs)), {groups, n_t});
  return g.mean(g.info_nce(sims, n_t - 1, tau));
}

Var inter_loss(Graph& g, Var h, Var h_aug, std::size_t n_t, double tau) {
  const SeqDims d = aug_dims(g.value(h_aug), n_t);
  const Tensor& hv = g.value(h);
  if (hv.rank() != 3 || hv.dim(0) != d.batch || hv.dim(1) != d.steps || hv.dim(2) != d.width) {
    throw ShapeError("inter_loss: original " + shape_str(hv.shape()) + " misaligned with augmented " +
                     shape_str(g.value(h_aug).shape()));
  }
  const std::size_t len = n_t * d.steps;
  // Per anchor: n_t positives (all copies of the step), then the original next step.
  std::vector<RowPair> pairs;
  pairs.reserve(d.batch * (d.steps - 1) * (n_t + 1));
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t i = 0; i + 1 < d.steps; ++i) {
      const RowRef anchor{0, b * d.steps + i};
      for (std::size_t z = 0; z < n_t; ++z) pairs.push_back({anchor, {1, b * len + i * n_t + z}});
      pairs.push_back({anchor, {0, b * d.steps + i + 1}});
    }
  const std::size_t groups = d.batch * (d.steps - 1);
  const Var sims = g.reshape(g.pair_cosine(h, h_aug, std::move(pairs)), {groups, n_t + 1});
  return g.mean(g.info_nce(sims, n_t, tau));
}

RclLossNodes rcl_loss(Graph& g, Var h, Var h_aug, std::size_t n_t, double tau) {
  const Var intra = intra_loss(g, h_aug, n_t, tau);
  const Var inter = inter_loss(g, h, h_aug, n_t, tau);
  return {intra, inter, g.add(intra, inter)};
}

double intra_loss(const Tensor& h_aug, std::size_t n_t, double tau) {
  Graph g;
  return g.value(intra_loss(g, g.constant(h_aug), n_t, tau)).item();
}

double inter_loss(const Tensor& h, const Tensor& h_aug, std::size_t n_t, double tau) {
  Graph g;
  return g.value(inter_loss(g, g.constant(h), g.constant(h_aug), n_t, tau)).item();
}

double rcl_loss(const Tensor& h, const Tensor& h_aug, std::size_t n_t, double tau) {
  Graph g;
  return g.value(rcl_loss(g, g.constant(h), g.constant(h_aug), n_t, tau).total).item();
}

}  // namespace rcl
