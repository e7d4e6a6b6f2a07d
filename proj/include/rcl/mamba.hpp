#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "rcl/graph.hpp"
#include "rcl/tensor.hpp"

namespace rcl {

struct MambaConfig {
  std::size_t d_model = 16;
  std::size_t d_state = 16;
  std::size_t d_conv = 4;
  std::size_t expand = 2;

  std::size_t d_inner() const { return expand * d_model; }
  // ceil(d_model / 16), at least 1.
  std::size_t dt_rank() const { return d_model == 0 ? 1 : (d_model + 15) / 16; }
  void validate() const;
};

// Learnable arrays of one block. A = -exp(a_log).
struct MambaParams {
  Tensor w_in;    // [d_model, 2*d_inner]
  Tensor conv_w;  // [d_inner, d_conv]
  Tensor conv_b;  // [d_inner]
  Tensor w_x;     // [d_inner, dt_rank + 2*d_state]
  Tensor w_dt;    // [dt_rank, d_inner]
  Tensor b_dt;    // [d_inner]
  Tensor a_log;   // [d_inner, d_state]
  Tensor d_skip;  // [d_inner]
  Tensor w_out;   // [d_inner, d_model]

  template <typename F>
  void for_each(F&& f) {
    f("w_in", w_in);
    f("conv_w", conv_w);
    f("conv_b", conv_b);
    f("w_x", w_x);
    f("w_dt", w_dt);
    f("b_dt", b_dt);
    f("a_log", a_log);
    f("d_skip", d_skip);
    f("w_out", w_out);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<MambaParams*>(this)->for_each(
        [&](const char* name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }

  Tensor a() const;  // -exp(a_log)

  // Entries are named `<prefix><field>`.
  void store(TensorMap& out, const std::string& prefix) const;
  static MambaParams load(const TensorMap& in, const std::string& prefix, const MambaConfig& cfg);

  // Throws ShapeError unless every array matches cfg.
  void check_shapes(const MambaConfig& cfg) const;
  bool bit_equal(const MambaParams& other) const;
};

// Projections uniform in +-1/sqrt(fan_in); a_log row = log(1..d_state);
// softplus(b_dt) log-uniform in [1e-3, 1e-1]; d_skip = 1.
MambaParams init_params(const MambaConfig& cfg, std::uint64_t seed);

struct Discretized {
  Tensor abar;  // [d_inner, d_state]
  Tensor bbar;  // [d_inner, d_state]
};

// Zero-order hold: Abar = exp(delta*A), Bbar = (exp(delta*A) - 1)/(delta*A) * delta * B,
// falling back to delta * B when |delta*A| < 1e-8.
Discretized discretize(const Tensor& a, const Tensor& b_t, const Tensor& delta_t);

struct ScanResult {
  Tensor out;            // [T, d_inner]
  Tensor hidden;         // [T, d_inner, d_state]
  Tensor input_contrib;  // [T, d_inner, d_state]
};

// h_t = abar_t * h_{t-1} + bbar_t * x_t, o_t = sum_j c_t[j] h_t[:, j] + d_skip * x_t, h_0 = 0.
//   abar, bbar: [T, d_inner, d_state]; c: [T, d_state]; x: [T, d_inner]; d_skip: [d_inner]
ScanResult selective_scan(const Tensor& abar, const Tensor& bbar, const Tensor& c, const Tensor& x,
                          const Tensor& d_skip, bool want_trace = false);

struct BlockTrace {
  Tensor a;              // [d_inner, d_state]
  Tensor hidden;         // [B, T, d_inner, d_state]
  Tensor delta;          // [B, T, d_inner]
  Tensor input_contrib;  // [B, T, d_inner, d_state], bbar_t * x_t

  std::size_t batch() const { return hidden.dim(0); }
  std::size_t steps() const { return hidden.dim(1); }
  std::size_t d_inner() const { return hidden.dim(2); }
  std::size_t d_state() const { return hidden.dim(3); }
};

struct BlockLeaves {
  Var w_in, conv_w, conv_b, w_x, w_dt, b_dt, a_log, d_skip, w_out;
};

// Registers the block arrays as leaves named `<prefix><field>`.
BlockLeaves add_block_leaves(Graph& g, const MambaParams& p, const std::string& prefix);

struct BlockNodes {
  Var out;   // [B, T, d_model]
  Var scan;  // the fused scan node
};

// Appends one block to the graph. x: [B, T, d_model].
BlockNodes block_graph(Graph& g, const BlockLeaves& p, Var x, const MambaConfig& cfg);

// Rebuilds the trace from a scan node of an evaluated graph.
BlockTrace extract_trace(const Graph& g, Var scan);

struct BlockResult {
  Tensor h;  // [B, T, d_model]
  std::optional<BlockTrace> trace;
};

BlockResult block_forward(const MambaParams& p, const MambaConfig& cfg, const Tensor& x,
                          bool want_trace = false);

}  // namespace rcl
