#include "rcl/graph.hpp"

#include <algorithm>
#include <cmath>

#include "rcl/error.hpp"

namespace rcl {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddBias: return "add_bias";
    case Op::MatMul: return "matmul";
    case Op::Reshape: return "reshape";
    case Op::Slice: return "slice";
    case Op::Silu: return "silu";
    case Op::Softplus: return "softplus";
    case Op::Exp: return "exp";
    case Op::Neg: return "neg";
    case Op::Abs: return "abs";
    case Op::Square: return "square";
    case Op::Transpose12: return "transpose12";
    case Op::CausalConv: return "causal_conv";
    case Op::SelectiveScan: return "selective_scan";
    case Op::LayerNorm: return "layer_norm";
    case Op::PairCosine: return "pair_cosine";
    case Op::InfoNce: return "info_nce";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
  }
  return "?";
}

namespace {

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }
std::size_t rows_of(const Tensor& t) { return t.size() / last_dim(t); }

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// (e^z - 1)/z and its derivative, with the removable singularity at z = 0.
constexpr double kZohGuard = 1e-8;

inline double zoh_factor(double z, double em1) {
  return std::abs(z) < kZohGuard ? 1.0 : em1 / z;
}

inline double zoh_factor_deriv(double z, double em1) {
  if (std::abs(z) < 1e-4) return 0.5 + z / 3.0 + z * z / 8.0;
  return (z * (em1 + 1.0) - em1) / (z * z);
}

}  // namespace

const Node& Graph::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw Error("invalid graph variable id " + std::to_string(v.id));
  }
  return nodes_[v.id];
}

Var Graph::push(Node n) {
  for (int in : n.inputs) {
    if (in < 0 || static_cast<std::size_t>(in) >= nodes_.size()) {
      throw Error(std::string("node input does not precede ") + op_name(n.op));
    }
  }
  evaluate(n);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Graph::leaf(const std::string& name, Tensor value) {
  if (leaves_.contains(name)) throw Error("duplicate leaf name '" + name + "'");
  Node n;
  n.op = Op::Leaf;
  n.name = name;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  leaves_[name] = id;
  return Var{id};
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

namespace {

Node make(Op op, std::initializer_list<Var> in) {
  Node n;
  n.op = op;
  for (auto v : in) n.inputs.push_back(v.id);
  return n;
}

}  // namespace

Var Graph::add(Var a, Var b) { return push(make(Op::Add, {a, b})); }
Var Graph::sub(Var a, Var b) { return push(make(Op::Sub, {a, b})); }
Var Graph::mul(Var a, Var b) { return push(make(Op::Mul, {a, b})); }
Var Graph::scale(Var a, double factor) {
  Node n = make(Op::Scale, {a});
  n.real = factor;
  return push(std::move(n));
}
Var Graph::add_bias(Var x, Var bias) { return push(make(Op::AddBias, {x, bias})); }
Var Graph::matmul(Var x, Var w) { return push(make(Op::MatMul, {x, w})); }
Var Graph::reshape(Var x, Shape shape) {
  Node n = make(Op::Reshape, {x});
  n.target = std::move(shape);
  return push(std::move(n));
}
Var Graph::slice_last(Var x, std::size_t start, std::size_t width) {
  Node n = make(Op::Slice, {x});
  n.offset = start;
  n.length = width;
  return push(std::move(n));
}
Var Graph::silu(Var x) { return push(make(Op::Silu, {x})); }
Var Graph::softplus(Var x) { return push(make(Op::Softplus, {x})); }
Var Graph::exp(Var x) { return push(make(Op::Exp, {x})); }
Var Graph::neg(Var x) { return push(make(Op::Neg, {x})); }
Var Graph::abs(Var x) { return push(make(Op::Abs, {x})); }
Var Graph::square(Var x) { return push(make(Op::Square, {x})); }
Var Graph::transpose12(Var x) { return push(make(Op::Transpose12, {x})); }
Var Graph::causal_conv(Var x, Var w, Var b) { return push(make(Op::CausalConv, {x, w, b})); }
Var Graph::selective_scan(Var u, Var delta, Var a, Var b_in, Var c_out, Var d_skip) {
  return push(make(Op::SelectiveScan, {u, delta, a, b_in, c_out, d_skip}));
}
Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  Node n = make(Op::LayerNorm, {x, gamma, beta});
  n.real = eps;
  return push(std::move(n));
}
Var Graph::pair_cosine(Var x, Var y, std::vector<RowPair> pairs) {
  Node n = make(Op::PairCosine, {x, y});
  n.pairs = std::move(pairs);
  return push(std::move(n));
}
Var Graph::info_nce(Var s, std::size_t n_pos, double tau) {
  Node n = make(Op::InfoNce, {s});
  n.offset = n_pos;
  n.real = tau;
  return push(std::move(n));
}
Var Graph::mean(Var x) { return push(make(Op::Mean, {x})); }
Var Graph::sum(Var x) { return push(make(Op::Sum, {x})); }

Var Graph::leaf_var(const std::string& name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw Error("unknown leaf '" + name + "'");
  return Var{it->second};
}

std::vector<std::string> Graph::leaf_names() const {
  std::vector<std::string> out;
  for (const auto& [name, id] : leaves_) out.push_back(name);
  return out;
}

void Graph::set_leaf(const std::string& name, Tensor value) {
  Node& n = nodes_[leaf_var(name).id];
  require_same(n.value, value, "set_leaf");
  n.value = std::move(value);
}

void Graph::forward() {
  for (auto& n : nodes_) {
    if (n.op != Op::Leaf && n.op != Op::Constant) evaluate(n);
  }
}

void Graph::evaluate(Node& n) const {
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      return;

    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require_same(a, b, op_name(n.op));
      Tensor out(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = n.op == Op::Add ? a[i] + b[i] : n.op == Op::Sub ? a[i] - b[i] : a[i] * b[i];
      }
      n.value = std::move(out);
      return;
    }

    case Op::Scale: {
      Tensor out = in(0);
      for (auto& v : out.data()) v *= n.real;
      n.value = std::move(out);
      return;
    }

    case Op::AddBias: {
      const Tensor& x = in(0);
      const Tensor& b = in(1);
      const std::size_t d = last_dim(x);
      if (b.size() != d) {
        throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " vs input " +
                         shape_str(x.shape()));
      }
      Tensor out = x;
      auto od = out.data();
      for (std::size_t r = 0; r < rows_of(x); ++r)
        for (std::size_t j = 0; j < d; ++j) od[r * d + j] += b[j];
      n.value = std::move(out);
      return;
    }

    case Op::MatMul: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      if (w.rank() != 2 || last_dim(x) != w.dim(0) || x.rank() < 2) {
        throw ShapeError("matmul shape mismatch: " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()));
      }
      Tensor flat = rcl::matmul(x.reshaped({rows_of(x), last_dim(x)}), w);
      Shape shape = x.shape();
      shape.back() = w.dim(1);
      n.value = flat.reshaped(std::move(shape));
      return;
    }

    case Op::Reshape:
      n.value = in(0).reshaped(n.target);
      return;

    case Op::Slice: {
      const Tensor& x = in(0);
      const std::size_t d = last_dim(x);
      if (n.length == 0 || n.offset + n.length > d) {
        throw ShapeError("slice [" + std::to_string(n.offset) + ", " +
                         std::to_string(n.offset + n.length) + ") out of range for " +
                         shape_str(x.shape()));
      }
      Shape shape = x.shape();
      shape.back() = n.length;
      Tensor out(shape);
      const std::size_t r = rows_of(x);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < n.length; ++j) out[i * n.length + j] = x[i * d + n.offset + j];
      n.value = std::move(out);
      return;
    }

    case Op::Silu:
    case Op::Softplus:
    case Op::Exp:
    case Op::Neg:
    case Op::Abs:
    case Op::Square: {
      const Tensor& x = in(0);
      Tensor out(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        switch (n.op) {
          case Op::Silu: out[i] = rcl::silu(v); break;
          case Op::Softplus: out[i] = rcl::softplus(v); break;
          case Op::Exp: out[i] = std::exp(v); break;
          case Op::Neg: out[i] = -v; break;
          case Op::Abs: out[i] = std::abs(v); break;
          default: out[i] = v * v; break;
        }
      }
      n.value = std::move(out);
      return;
    }

    case Op::Transpose12: {
      const Tensor& x = in(0);
      if (x.rank() != 3) throw ShapeError("transpose12 expects rank 3, got " + shape_str(x.shape()));
      const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2);
      Tensor out({A, C, B});
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c) out[(a * C + c) * B + b] = x[(a * B + b) * C + c];
      n.value = std::move(out);
      return;
    }

    case Op::CausalConv: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      if (x.rank() != 3 || w.rank() != 2 || w.dim(0) != x.dim(2) || b.size() != x.dim(2)) {
        throw ShapeError("causal_conv shape mismatch: x " + shape_str(x.shape()) + ", w " +
                         shape_str(w.shape()) + ", b " + shape_str(b.shape()));
      }
      const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2), K = w.dim(1);
      Tensor out(x.shape());
      for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t c = 0; c < C; ++c) {
            double acc = b[c];
            for (std::size_t k = 0; k < K; ++k) {
              // tap k reads step t - (K-1) + k
              if (t + k + 1 < K) continue;
              const std::size_t src = t + k + 1 - K;
              acc += w[c * K + k] * x[(bb * T + src) * C + c];
            }
            out[(bb * T + t) * C + c] = acc;
          }
      n.value = std::move(out);
      return;
    }

    case Op::SelectiveScan: {
      const Tensor& u = in(0);
      const Tensor& delta = in(1);
      const Tensor& a = in(2);
      const Tensor& bm = in(3);
      const Tensor& cm = in(4);
      const Tensor& dskip = in(5);
      if (u.rank() != 3 || !u.same_shape(delta) || a.rank() != 2 || a.dim(0) != u.dim(2) ||
          bm.rank() != 3 || !bm.same_shape(cm) || bm.dim(0) != u.dim(0) || bm.dim(1) != u.dim(1) ||
          bm.dim(2) != a.dim(1) || dskip.size() != u.dim(2)) {
        throw ShapeError("selective_scan shape mismatch: u " + shape_str(u.shape()) + ", delta " +
                         shape_str(delta.shape()) + ", A " + shape_str(a.shape()) + ", B " +
                         shape_str(bm.shape()) + ", C " + shape_str(cm.shape()));
      }
      const std::size_t B = u.dim(0), T = u.dim(1), D = u.dim(2), N = a.dim(1);
      Tensor em1({B, T, D, N});
      Tensor hid({B, T, D, N});
      Tensor y(u.shape());
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t) {
          const double* bt = &bm[(b * T + t) * N];
          const double* ct = &cm[(b * T + t) * N];
          for (std::size_t i = 0; i < D; ++i) {
            const std::size_t bti = (b * T + t) * D + i;
            const double d = delta[bti];
            if (!(d > 0.0)) throw NumericError("selective_scan: non-positive delta");
            const double x = u[bti];
            const double* ai = &a[i * N];
            double* e_out = &em1[bti * N];
            double* h_out = &hid[bti * N];
            const double* h_prev = t ? &hid[((b * T + t - 1) * D + i) * N] : nullptr;
            double acc = 0.0;
            for (std::size_t j = 0; j < N; ++j) {
              const double z = d * ai[j];
              const double e = std::expm1(z);
              const double bbar = zoh_factor(z, e) * d * bt[j];
              const double hp = h_prev ? h_prev[j] : 0.0;
              const double h = (e + 1.0) * hp + bbar * x;
              e_out[j] = e;
              h_out[j] = h;
              acc += ct[j] * h;
            }
            y[bti] = acc + dskip[i] * x;
          }
        }
      n.aux = {std::move(em1), std::move(hid)};
      n.value = std::move(y);
      return;
    }

    case Op::LayerNorm: {
      const Tensor& x = in(0);
      const Tensor& g = in(1);
      const Tensor& be = in(2);
      const std::size_t d = last_dim(x);
      if (g.size() != d || be.size() != d) {
        throw ShapeError("layer_norm parameter width mismatch for " + shape_str(x.shape()));
      }
      Tensor out(x.shape());
      for (std::size_t r = 0; r < rows_of(x); ++r) {
        const double* xr = &x[r * d];
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + n.real);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (xr[j] - mu) * rstd * g[j] + be[j];
      }
      n.value = std::move(out);
      return;
    }

    case Op::PairCosine: {
      const Tensor* src[2] = {&in(0), &in(1)};
      const std::size_t d = last_dim(*src[0]);
      if (last_dim(*src[1]) != d) {
        throw ShapeError("pair_cosine row width mismatch " + shape_str(src[0]->shape()) + " vs " +
                         shape_str(src[1]->shape()));
      }
      if (n.pairs.empty()) throw ShapeError("pair_cosine needs at least one pair");
      Tensor out({n.pairs.size()});
      for (std::size_t p = 0; p < n.pairs.size(); ++p) {
        const auto& pr = n.pairs[p];
        const Tensor& ta = *src[pr.a.src];
        const Tensor& tb = *src[pr.b.src];
        if (pr.a.row >= rows_of(ta) || pr.b.row >= rows_of(tb)) {
          throw ShapeError("pair_cosine row index out of range");
        }
        const double* ra = &ta[pr.a.row * d];
        const double* rb = &tb[pr.b.row * d];
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dot += ra[j] * rb[j];
          na += ra[j] * ra[j];
          nb += rb[j] * rb[j];
        }
        if (na == 0.0 || nb == 0.0) throw NumericError("cosine similarity of a zero-norm row");
        out[p] = dot / (std::sqrt(na) * std::sqrt(nb));
      }
      n.value = std::move(out);
      return;
    }

    case Op::InfoNce: {
      const Tensor& s = in(0);
      if (s.rank() != 2 || n.offset == 0 || n.offset >= s.dim(1)) {
        throw ShapeError("info_nce expects [G, K] with 0 < n_pos < K, got " + shape_str(s.shape()));
      }
      if (!(n.real > 0.0)) throw NumericError("info_nce temperature must be positive");
      const std::size_t G = s.dim(0), K = s.dim(1), P = n.offset;
      Tensor out({G});
      for (std::size_t g = 0; g < G; ++g) {
        const double* row = &s[g * K];
        double m_all = row[0] / n.real, m_pos = m_all;
        for (std::size_t k = 0; k < K; ++k) {
          m_all = std::max(m_all, row[k] / n.real);
          if (k < P) m_pos = std::max(m_pos, row[k] / n.real);
        }
        double s_all = 0.0, s_pos = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          s_all += std::exp(row[k] / n.real - m_all);
          if (k < P) s_pos += std::exp(row[k] / n.real - m_pos);
        }
        out[g] = (m_all + std::log(s_all)) - (m_pos + std::log(s_pos));
      }
      n.value = std::move(out);
      return;
    }

    case Op::Mean:
    case Op::Sum: {
      const Tensor& x = in(0);
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
      if (n.op == Op::Mean) acc /= static_cast<double>(x.size());
      n.value = Tensor::scalar(acc);
      return;
    }
  }
}

TensorMap Graph::gradient() const {
  if (output_ < 0 || static_cast<std::size_t>(output_) >= nodes_.size()) {
    throw Error("gradient: graph has no output node");
  }
  if (nodes_[output_].value.size() != 1) {
    throw ShapeError("gradient: output must be scalar, got " +
                     shape_str(nodes_[output_].value.shape()));
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (int in : nodes_[i].inputs) {
      if (in < 0 || static_cast<std::size_t>(in) >= i) throw Error("gradient: graph contains a cycle");
    }
  }

  // Which nodes depend on a leaf.
  std::vector<char> live(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::Leaf) {
      live[i] = 1;
    } else {
      for (int in : nodes_[i].inputs) live[i] |= live[in];
    }
  }

  std::vector<Tensor> adj(nodes_.size());
  std::vector<char> has(nodes_.size(), 0);
  adj[output_] = Tensor(nodes_[output_].value.shape(), 1.0);
  has[output_] = 1;
  for (int id = output_; id >= 0; --id) {
    if (!has[id] || !live[id] || nodes_[id].op == Op::Leaf) continue;
    backprop(static_cast<std::size_t>(id), adj[id], adj, has, live);
    for (int in : nodes_[id].inputs) {
      if (!live[in]) has[in] = 0;
    }
  }

  TensorMap grads;
  for (const auto& [name, id] : leaves_) {
    grads.emplace(name, has[id] ? adj[id] : Tensor(nodes_[id].value.shape(), 0.0));
  }
  return grads;
}

void Graph::backprop(std::size_t id, const Tensor& g, std::vector<Tensor>& adj,
                     std::vector<char>& has, const std::vector<char>& live) const {
  const Node& n = nodes_[id];
  auto need = [&](std::size_t k) { return live[n.inputs[k]] != 0; };
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
  // Adjoint buffer of input k, zero-initialized on first touch.
  auto acc = [&](std::size_t k) -> Tensor& {
    const int src = n.inputs[k];
    if (!has[src]) {
      adj[src] = Tensor(nodes_[src].value.shape(), 0.0);
      has[src] = 1;
    }
    return adj[src];
  };

  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      return;

    case Op::Add:
    case Op::Sub: {
      Tensor& ga = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      Tensor& gb = acc(1);
      const double sign = n.op == Op::Add ? 1.0 : -1.0;
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
      return;
    }

    case Op::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor& ga = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      Tensor& gb = acc(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      return;
    }

    case Op::Scale: {
      Tensor& ga = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.real;
      return;
    }

    case Op::AddBias: {
      const std::size_t d = last_dim(g);
      Tensor& gx = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      Tensor& gb = acc(1);
      for (std::size_t r = 0; r < rows_of(g); ++r)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      return;
    }

    case Op::MatMul: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const std::size_t m = rows_of(x), k = w.dim(0), nn = w.dim(1);
      // gx = g . w^T, row updates against an explicit transpose
      if (need(0)) {
        std::vector<double> wt(k * nn);
        for (std::size_t kk = 0; kk < k; ++kk)
          for (std::size_t j = 0; j < nn; ++j) wt[j * k + kk] = w[kk * nn + j];
        Tensor& gx = acc(0);
        for (std::size_t r = 0; r < m; ++r) {
          double* gxr = &gx[r * k];
          for (std::size_t j = 0; j < nn; ++j) {
            const double gv = g[r * nn + j];
            const double* wtr = &wt[j * k];
            for (std::size_t kk = 0; kk < k; ++kk) gxr[kk] += gv * wtr[kk];
          }
        }
      }
      if (!need(1)) return;
      // gw = x^T . g
      Tensor& gw = acc(1);
      for (std::size_t r = 0; r < m; ++r) {
        const double* gr = &g[r * nn];
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double xv = x[r * k + kk];
          double* gwr = &gw[kk * nn];
          for (std::size_t j = 0; j < nn; ++j) gwr[j] += xv * gr[j];
        }
      }
      return;
    }

    case Op::Reshape: {
      Tensor& gx = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      return;
    }

    case Op::Slice: {
      const Tensor& x = in(0);
      const std::size_t d = last_dim(x);
      Tensor& gx = acc(0);
      for (std::size_t r = 0; r < rows_of(x); ++r)
        for (std::size_t j = 0; j < n.length; ++j) gx[r * d + n.offset + j] += g[r * n.length + j];
      return;
    }

    case Op::Silu:
    case Op::Softplus:
    case Op::Exp:
    case Op::Neg:
    case Op::Abs:
    case Op::Square: {
      const Tensor& x = in(0);
      Tensor& gx = acc(0);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        double d;
        switch (n.op) {
          case Op::Silu: {
            const double s = sigmoid(v);
            d = s * (1.0 + v * (1.0 - s));
            break;
          }
          case Op::Softplus: d = sigmoid(v); break;
          case Op::Exp: d = n.value[i]; break;
          case Op::Neg: d = -1.0; break;
          case Op::Abs: d = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); break;
          default: d = 2.0 * v; break;
        }
        gx[i] += g[i] * d;
      }
      return;
    }

    case Op::Transpose12: {
      const Tensor& x = in(0);
      const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2);
      Tensor& gx = acc(0);
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c) gx[(a * B + b) * C + c] += g[(a * C + c) * B + b];
      return;
    }

    case Op::CausalConv: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2), K = w.dim(1);
      Tensor* gx = need(0) ? &acc(0) : nullptr;
      Tensor& gw = acc(1);
      Tensor& gb = acc(2);
      for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t c = 0; c < C; ++c) {
            const double go = g[(bb * T + t) * C + c];
            gb[c] += go;
            for (std::size_t k = 0; k < K; ++k) {
              if (t + k + 1 < K) continue;
              const std::size_t src = (bb * T + t + k + 1 - K) * C + c;
              gw[c * K + k] += go * x[src];
              if (gx) (*gx)[src] += go * w[c * K + k];
            }
          }
      return;
    }

    case Op::SelectiveScan: {
      const Tensor& u = in(0);
      const Tensor& delta = in(1);
      const Tensor& a = in(2);
      const Tensor& bm = in(3);
      const Tensor& cm = in(4);
      const Tensor& dskip = in(5);
      const Tensor& em1 = n.aux[0];
      const Tensor& hid = n.aux[1];
      const std::size_t B = u.dim(0), T = u.dim(1), D = u.dim(2), N = a.dim(1);
      Tensor& gu = acc(0);
      Tensor& gdelta = acc(1);
      Tensor& ga = acc(2);
      Tensor& gb = acc(3);
      Tensor& gc = acc(4);
      Tensor& gd = acc(5);
      std::vector<double> carry(D * N);
      for (std::size_t b = 0; b < B; ++b) {
        std::fill(carry.begin(), carry.end(), 0.0);
        for (std::size_t tt = T; tt-- > 0;) {
          const std::size_t bt = b * T + tt;
          const double* bv = &bm[bt * N];
          const double* cv = &cm[bt * N];
          double* gbv = &gb[bt * N];
          double* gcv = &gc[bt * N];
          for (std::size_t i = 0; i < D; ++i) {
            const std::size_t bti = bt * D + i;
            const double d = delta[bti];
            const double x = u[bti];
            const double gy = g[bti];
            gd[i] += gy * x;
            double gu_acc = gy * dskip[i];
            double gdelta_acc = 0.0;
            const double* ai = &a[i * N];
            const double* ev = &em1[bti * N];
            const double* hv = &hid[bti * N];
            const double* hp = tt ? &hid[((bt - 1) * D + i) * N] : nullptr;
            double* gai = &ga[i * N];
            double* cr = &carry[i * N];
            for (std::size_t j = 0; j < N; ++j) {
              const double z = d * ai[j];
              const double e = ev[j];
              const double abar = e + 1.0;
              const double f = zoh_factor(z, e);
              const double fp = zoh_factor_deriv(z, e);
              gcv[j] += gy * hv[j];
              const double gh = cr[j] + gy * cv[j];
              const double hprev = hp ? hp[j] : 0.0;
              gu_acc += gh * f * d * bv[j];
              const double g_bbar = gh * x;
              const double gz = gh * hprev * abar + g_bbar * d * bv[j] * fp;
              gdelta_acc += gz * ai[j] + g_bbar * f * bv[j];
              gai[j] += gz * d;
              gbv[j] += g_bbar * f * d;
              cr[j] = gh * abar;
            }
            gu[bti] += gu_acc;
            gdelta[bti] += gdelta_acc;
          }
        }
      }
      return;
    }

    case Op::LayerNorm: {
      const Tensor& x = in(0);
      const Tensor& gam = in(1);
      const std::size_t d = last_dim(x);
      Tensor& gx = acc(0);
      Tensor& gg = acc(1);
      Tensor& gbeta = acc(2);
      std::vector<double> xhat(d), gxh(d);
      for (std::size_t r = 0; r < rows_of(x); ++r) {
        const double* xr = &x[r * d];
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + n.real);
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          xhat[j] = (xr[j] - mu) * rstd;
          const double go = g[r * d + j];
          gg[j] += go * xhat[j];
          gbeta[j] += go;
          gxh[j] = go * gam[j];
          m1 += gxh[j];
          m2 += gxh[j] * xhat[j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += rstd * (gxh[j] - m1 - xhat[j] * m2);
      }
      return;
    }

    case Op::PairCosine: {
      const Tensor* src[2] = {&in(0), &in(1)};
      Tensor* gsrc[2] = {&acc(0), &acc(1)};
      const std::size_t d = last_dim(*src[0]);
      for (std::size_t p = 0; p < n.pairs.size(); ++p) {
        const auto& pr = n.pairs[p];
        const double* ra = &(*src[pr.a.src])[pr.a.row * d];
        const double* rb = &(*src[pr.b.src])[pr.b.row * d];
        double* ga = &(*gsrc[pr.a.src])[pr.a.row * d];
        double* gb = &(*gsrc[pr.b.src])[pr.b.row * d];
        double na2 = 0.0, nb2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          na2 += ra[j] * ra[j];
          nb2 += rb[j] * rb[j];
        }
        const double s = n.value[p];
        const double inv = 1.0 / (std::sqrt(na2) * std::sqrt(nb2));
        const double gp = g[p];
        for (std::size_t j = 0; j < d; ++j) {
          const double da = rb[j] * inv - s * ra[j] / na2;
          const double db = ra[j] * inv - s * rb[j] / nb2;
          ga[j] += gp * da;
          gb[j] += gp * db;
        }
      }
      return;
    }

    case Op::InfoNce: {
      const Tensor& s = in(0);
      const std::size_t G = s.dim(0), K = s.dim(1), P = n.offset;
      const double tau = n.real;
      Tensor& gs = acc(0);
      std::vector<double> e_all(K), e_pos(K);
      for (std::size_t gi = 0; gi < G; ++gi) {
        const double* row = &s[gi * K];
        double m_all = row[0] / tau, m_pos = m_all;
        for (std::size_t k = 0; k < K; ++k) {
          m_all = std::max(m_all, row[k] / tau);
          if (k < P) m_pos = std::max(m_pos, row[k] / tau);
        }
        double z_all = 0.0, z_pos = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          e_all[k] = std::exp(row[k] / tau - m_all);
          z_all += e_all[k];
          e_pos[k] = k < P ? std::exp(row[k] / tau - m_pos) : 0.0;
          z_pos += e_pos[k];
        }
        for (std::size_t k = 0; k < K; ++k) {
          gs[gi * K + k] += g[gi] * (e_all[k] / z_all - e_pos[k] / z_pos) / tau;
        }
      }
      return;
    }

    case Op::Mean:
    case Op::Sum: {
      Tensor& gx = acc(0);
      const double scale = n.op == Op::Mean ? g[0] / static_cast<double>(gx.size()) : g[0];
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += scale;
      return;
    }
  }
}

}  // namespace rcl
