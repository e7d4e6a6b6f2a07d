#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rcl/tensor.hpp"

namespace rcl {

// Handle to a node of a Graph.
struct Var {
  int id = -1;
};

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Scale,
  AddBias,
  MatMul,
  Reshape,
  Slice,
  Silu,
  Softplus,
  Exp,
  Neg,
  Abs,
  Square,
  Transpose12,
  CausalConv,
  SelectiveScan,
  LayerNorm,
  PairCosine,
  InfoNce,
  Mean,
  Sum,
};

const char* op_name(Op op);

// Row reference for PairCosine: `src` selects the first (0) or second (1)
// input, `row` indexes its rows after flattening all leading axes.
struct RowRef {
  int src = 0;
  std::size_t row = 0;
};

struct RowPair {
  RowRef a;
  RowRef b;
};

struct Node {
  Op op = Op::Constant;
  std::vector<int> inputs;
  Tensor value;

  std::string name;          // Leaf
  double real = 0.0;         // Scale factor, InfoNce tau, LayerNorm eps
  std::size_t offset = 0;    // Slice start, InfoNce positive count
  std::size_t length = 0;    // Slice width
  Shape target;              // Reshape
  std::vector<RowPair> pairs;  // PairCosine
  std::vector<Tensor> aux;   // forward intermediates kept for the reverse pass
};

using TensorMap = std::map<std::string, Tensor>;

// Reverse-mode tape. Nodes are appended in evaluation order, so the inputs of
// every node precede it. Values are computed eagerly when a node is appended;
// forward() re-evaluates the whole tape after leaves have been replaced.
class Graph {
 public:
  Var leaf(const std::string& name, Tensor value);
  Var constant(Tensor value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var add_bias(Var x, Var bias);
  // x: [..., k] (leading axes flattened), w: [k, n] -> [..., n].
  Var matmul(Var x, Var w);
  Var reshape(Var x, Shape shape);
  // Slice of the last axis, [start, start + width).
  Var slice_last(Var x, std::size_t start, std::size_t width);
  Var silu(Var x);
  Var softplus(Var x);
  Var exp(Var x);
  Var neg(Var x);
  Var abs(Var x);
  Var square(Var x);
  // [a, b, c] -> [a, c, b]
  Var transpose12(Var x);
  // Depthwise causal convolution: x [B,T,C], w [C,K], b [C]; left zero padding of K-1.
  Var causal_conv(Var x, Var w, Var b);
  // Fused ZOH discretization + selective scan + skip path.
  //   u, delta: [B,T,Di]; a: [Di,N]; b_in, c_out: [B,T,N]; d_skip: [Di] -> [B,T,Di]
  // aux[0] = expm1(delta*a), aux[1] = hidden states, both [B,T,Di,N].
  Var selective_scan(Var u, Var delta, Var a, Var b_in, Var c_out, Var d_skip);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var pair_cosine(Var x, Var y, std::vector<RowPair> pairs);
  // s: [G, K]; the first n_pos columns of each row are positives. Per-row
  // -log(sum_pos exp(s/tau) / sum_all exp(s/tau)) -> [G].
  Var info_nce(Var s, std::size_t n_pos, double tau);
  Var mean(Var x);
  Var sum(Var x);

  const Tensor& value(Var v) const { return node(v).value; }
  const Node& node(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  void set_output(Var v) { output_ = v.id; }
  Var output() const { return Var{output_}; }

  bool has_leaf(const std::string& name) const { return leaves_.contains(name); }
  Var leaf_var(const std::string& name) const;
  std::vector<std::string> leaf_names() const;
  // Replace a leaf value (same shape). Call forward() afterwards.
  void set_leaf(const std::string& name, Tensor value);
  void forward();

  // Gradients of the scalar output with respect to every leaf.
  TensorMap gradient() const;

 private:
  Var push(Node n);
  void evaluate(Node& n) const;
  void backprop(std::size_t id, const Tensor& g, std::vector<Tensor>& adj,
                std::vector<char>& has, const std::vector<char>& live) const;

  std::vector<Node> nodes_;
  std::map<std::string, int> leaves_;
  int output_ = -1;
};

}  // namespace rcl
