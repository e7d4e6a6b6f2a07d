#include "rcl/mamba.hpp"

#include <cmath>
#include <random>

#include "rcl/error.hpp"

namespace rcl {

void MambaConfig::validate() const {
  if (d_model == 0 || d_state == 0 || d_conv == 0 || expand == 0) {
    throw ConfigError("mamba config: d_model, d_state, d_conv and expand must all be positive");
  }
}

Tensor MambaParams::a() const {
  Tensor out(a_log.shape());
  for (std::size_t i = 0; i < a_log.size(); ++i) out[i] = -std::exp(a_log[i]);
  return out;
}

void MambaParams::store(TensorMap& out, const std::string& prefix) const {
  for_each([&](const char* name, const Tensor& t) { out.insert_or_assign(prefix + name, t); });
}

MambaParams MambaParams::load(const TensorMap& in, const std::string& prefix,
                              const MambaConfig& cfg) {
  MambaParams p;
  p.for_each([&](const char* name, Tensor& t) {
    auto it = in.find(prefix + name);
    if (it == in.end()) throw FormatError("missing parameter '" + prefix + name + "'");
    t = it->second;
  });
  p.check_shapes(cfg);
  return p;
}

void MambaParams::check_shapes(const MambaConfig& cfg) const {
  const std::size_t dm = cfg.d_model, di = cfg.d_inner(), n = cfg.d_state, r = cfg.dt_rank();
  auto expect = [](const char* name, const Tensor& t, const Shape& s) {
    if (t.shape() != s) {
      throw ShapeError(std::string("parameter ") + name + " has shape " + shape_str(t.shape()) +
                       ", expected " + shape_str(s));
    }
  };
  expect("w_in", w_in, {dm, 2 * di});
  expect("conv_w", conv_w, {di, cfg.d_conv});
  expect("conv_b", conv_b, {di});
  expect("w_x", w_x, {di, r + 2 * n});
  expect("w_dt", w_dt, {r, di});
  expect("b_dt", b_dt, {di});
  expect("a_log", a_log, {di, n});
  expect("d_skip", d_skip, {di});
  expect("w_out", w_out, {di, dm});
}

bool MambaParams::bit_equal(const MambaParams& other) const {
  bool same = true;
  TensorMap mine, theirs;
  store(mine, "");
  other.store(theirs, "");
  for (const auto& [name, t] : mine) same = same && t.bit_equal(theirs.at(name));
  return same;
}

MambaParams init_params(const MambaConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t dm = cfg.d_model, di = cfg.d_inner(), n = cfg.d_state, r = cfg.dt_rank();
  std::mt19937_64 rng(seed);

  auto uniform = [&](Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = dist(rng);
    return t;
  };

  MambaParams p;
  p.w_in = uniform({dm, 2 * di}, dm);
  p.conv_w = uniform({di, cfg.d_conv}, cfg.d_conv);
  p.conv_b = uniform({di}, cfg.d_conv);
  p.w_x = uniform({di, r + 2 * n}, di);
  p.w_dt = uniform({r, di}, r);

  // softplus(b_dt) = dt with log(dt) ~ U(log 1e-3, log 1e-1); inverse softplus.
  p.b_dt = Tensor({di});
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  for (auto& v : p.b_dt.data()) {
    const double dt = std::exp(log_dt(rng));
    v = dt + std::log(-std::expm1(-dt));
  }

  p.a_log = Tensor({di, n});
  for (std::size_t i = 0; i < di; ++i)
    for (std::size_t j = 0; j < n; ++j) p.a_log[i * n + j] = std::log(static_cast<double>(j + 1));
  p.d_skip = Tensor({di}, 1.0);
  p.w_out = uniform({di, dm}, di);
  return p;
}

Discretized discretize(const Tensor& a, const Tensor& b_t, const Tensor& delta_t) {
  if (a.rank() != 2 || b_t.size() != a.dim(1) || delta_t.size() != a.dim(0)) {
    throw ShapeError("discretize shape mismatch: A " + shape_str(a.shape()) + ", B " +
                     shape_str(b_t.shape()) + ", delta " + shape_str(delta_t.shape()));
  }
  const std::size_t di = a.dim(0), n = a.dim(1);
  Discretized out{Tensor(a.shape()), Tensor(a.shape())};
  for (std::size_t i = 0; i < di; ++i) {
    const double d = delta_t[i];
    if (!(d > 0.0)) throw NumericError("discretize: delta must be positive");
    for (std::size_t j = 0; j < n; ++j) {
      const double z = d * a[i * n + j];
      const double em1 = std::expm1(z);
      out.abar[i * n + j] = em1 + 1.0;
      const double f = std::abs(z) < 1e-8 ? 1.0 : em1 / z;
      out.bbar[i * n + j] = f * d * b_t[j];
    }
  }
  return out;
}

ScanResult selective_scan(const Tensor& abar, const Tensor& bbar, const Tensor& c, const Tensor& x,
                          const Tensor& d_skip, bool want_trace) {
  if (abar.rank() != 3 || !abar.same_shape(bbar) || c.rank() != 2 || x.rank() != 2 ||
      c.dim(0) != abar.dim(0) || x.dim(0) != abar.dim(0) || x.dim(1) != abar.dim(1) ||
      c.dim(1) != abar.dim(2) || d_skip.size() != abar.dim(1)) {
    throw ShapeError("selective_scan shape mismatch: abar " + shape_str(abar.shape()) + ", bbar " +
                     shape_str(bbar.shape()) + ", C " + shape_str(c.shape()) + ", x " +
                     shape_str(x.shape()) + ", d_skip " + shape_str(d_skip.shape()));
  }
  const std::size_t T = abar.dim(0), D = abar.dim(1), N = abar.dim(2);
  ScanResult res{Tensor({T, D}), Tensor({1}), Tensor({1})};
  if (want_trace) {
    res.hidden = Tensor({T, D, N});
    res.input_contrib = Tensor({T, D, N});
  }
  // Running state updated in place, one row of d_state per channel.
  std::vector<double> h(D * N, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* at = &abar[t * D * N];
    const double* bt = &bbar[t * D * N];
    const double* ct = &c[t * N];
    for (std::size_t i = 0; i < D; ++i) {
      const double xv = x[t * D + i];
      double* hi = &h[i * N];
      double acc = 0.0;
      for (std::size_t j = 0; j < N; ++j) {
        const double contrib = bt[i * N + j] * xv;
        hi[j] = at[i * N + j] * hi[j] + contrib;
        acc += ct[j] * hi[j];
        if (want_trace) {
          res.hidden[(t * D + i) * N + j] = hi[j];
          res.input_contrib[(t * D + i) * N + j] = contrib;
        }
      }
      res.out[t * D + i] = acc + d_skip[i] * xv;
    }
  }
  return res;
}

BlockLeaves add_block_leaves(Graph& g, const MambaParams& p, const std::string& prefix) {
  BlockLeaves v;
  v.w_in = g.leaf(prefix + "w_in", p.w_in);
  v.conv_w = g.leaf(prefix + "conv_w", p.conv_w);
  v.conv_b = g.leaf(prefix + "conv_b", p.conv_b);
  v.w_x = g.leaf(prefix + "w_x", p.w_x);
  v.w_dt = g.leaf(prefix + "w_dt", p.w_dt);
  v.b_dt = g.leaf(prefix + "b_dt", p.b_dt);
  v.a_log = g.leaf(prefix + "a_log", p.a_log);
  v.d_skip = g.leaf(prefix + "d_skip", p.d_skip);
  v.w_out = g.leaf(prefix + "w_out", p.w_out);
  return v;
}

BlockNodes block_graph(Graph& g, const BlockLeaves& p, Var x, const MambaConfig& cfg) {
  const std::size_t di = cfg.d_inner(), n = cfg.d_state, r = cfg.dt_rank();
  const Var xz = g.matmul(x, p.w_in);
  const Var u = g.silu(g.causal_conv(g.slice_last(xz, 0, di), p.conv_w, p.conv_b));
  const Var z = g.slice_last(xz, di, di);
  const Var proj = g.matmul(u, p.w_x);
  const Var dt_logits = g.slice_last(proj, 0, r);
  const Var b_in = g.slice_last(proj, r, n);
  const Var c_out = g.slice_last(proj, r + n, n);
  const Var delta = g.softplus(g.add_bias(g.matmul(dt_logits, p.w_dt), p.b_dt));
  const Var a = g.neg(g.exp(p.a_log));
  const Var y = g.selective_scan(u, delta, a, b_in, c_out, p.d_skip);
  const Var out = g.matmul(g.mul(y, g.silu(z)), p.w_out);
  return {out, y};
}

BlockTrace extract_trace(const Graph& g, Var scan) {
  const Node& node = g.node(scan);
  if (node.op != Op::SelectiveScan) throw Error("extract_trace: node is not a selective scan");
  const Tensor& u = g.value(Var{node.inputs[0]});
  const Tensor& delta = g.value(Var{node.inputs[1]});
  const Tensor& a = g.value(Var{node.inputs[2]});
  const Tensor& bm = g.value(Var{node.inputs[3]});
  const Tensor& em1 = node.aux[0];
  const std::size_t B = u.dim(0), T = u.dim(1), D = u.dim(2), N = a.dim(1);

  BlockTrace tr{a, node.aux[1], delta, Tensor({B, T, D, N})};
  for (std::size_t bt = 0; bt < B * T; ++bt)
    for (std::size_t i = 0; i < D; ++i) {
      const double d = delta[bt * D + i];
      const double x = u[bt * D + i];
      for (std::size_t j = 0; j < N; ++j) {
        const std::size_t k = (bt * D + i) * N + j;
        const double z = d * a[i * N + j];
        const double f = std::abs(z) < 1e-8 ? 1.0 : em1[k] / z;
        tr.input_contrib[k] = f * d * bm[bt * N + j] * x;
      }
    }
  return tr;
}

BlockResult block_forward(const MambaParams& p, const MambaConfig& cfg, const Tensor& x,
                          bool want_trace) {
  cfg.validate();
  p.check_shapes(cfg);
  if (x.rank() != 3 || x.dim(2) != cfg.d_model) {
    throw ShapeError("block_forward expects [B, T, " + std::to_string(cfg.d_model) + "], got " +
                     shape_str(x.shape()));
  }
  if (!x.all_finite()) throw NumericError("block_forward: non-finite input");
  Graph g;
  const BlockLeaves leaves = add_block_leaves(g, p, "");
  const BlockNodes nodes = block_graph(g, leaves, g.constant(x), cfg);
  BlockResult res{g.value(nodes.out), std::nullopt};
  if (want_trace) res.trace = extract_trace(g, nodes.scan);
  return res;
}

}  // namespace rcl
