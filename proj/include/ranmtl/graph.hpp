#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ranmtl/tensor.hpp"

namespace ranmtl {

// Reverse-mode autodiff over a static DAG of dense f64 tensors.
//
// A Graph is append-only: builder calls return node ids and the vector order
// is already topological. Leaves are either inputs (per-batch data, dynamic
// row count) or params (fixed shape, trainable). Column counts are static and
// validated at build time; row counts follow the bound batch at eval time.

enum class OpKind {
  Input,
  Param,
  Affine,
  Relu,
  Sigmoid,
  SoftmaxRows,
  Add,
  Mul,
  MeanAll,
  MseLoss,
  BceLoss,
  WeightedSum,
  DSelectGate,
  SaturationPenalty,
};

struct Node {
  OpKind kind;
  std::vector<int> inputs;
  std::string name;                     // leaves only
  std::vector<std::size_t> leaf_shape;  // Param: full shape; Input: {cols}
  bool trainable = false;
  std::size_t cols = 0;       // static column count of the output
  bool scalar = false;        // MeanAll / losses / SaturationPenalty
  bool static_row = false;    // output has a single row regardless of batch
  std::size_t unit_width = 0;   // WeightedSum: expert output width
  std::size_t num_options = 0;  // DSelectGate: number of experts
  double gamma = 1.0;           // smooth-step support width
};

class Graph {
 public:
  // Batch leaf: shape [B, cols], B chosen at bind time. Never trainable.
  int input(const std::string& name, std::size_t cols);
  // Fixed-shape trainable leaf (rank 1 or 2).
  int param(const std::string& name, const std::vector<std::size_t>& shape);

  int affine(int x, int w, int b);
  int relu(int x);
  int sigmoid(int x);
  int softmax_rows(int x);
  int add(int a, int b);
  int mul(int a, int b);
  int mean_all(int x);
  int mse_loss(int pred, int target);
  int bce_loss(int prob, int target);

  // out[b,h] = sum_e gate[b,e] * bank_slice(e)[b,h]; expert slices are the
  // consecutive unit_width column blocks of the banks, in argument order.
  // A single-row gate broadcasts over the batch.
  int weighted_sum(int gate, const std::vector<int>& banks, std::size_t unit_width);

  // Static per-task gate from k binary selectors over num_options experts.
  // codes is [k, m] with 2^m >= num_options, mix is [k]. Output [1, n] on the
  // simplex (renormalized; uniform fallback when total mass < 1e-12).
  int dselect_gate(int codes, int mix, std::size_t num_options, double gamma);

  // sum of s(z)*(1-s(z)) over all entries; drives selector bits to 0/1.
  int saturation_penalty(int codes, double gamma);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& leaf_ids() const { return leaf_ids_; }
  // -1 when absent.
  int find_leaf(const std::string& name) const;

 private:
  int push(Node n);
  const Node& check_id(int i, const char* who) const;

  std::vector<Node> nodes_;
  std::vector<int> leaf_ids_;
};

// Smooth-step used by the selector gates: 0 below -gamma/2, 1 above gamma/2,
// C1 cubic in between.
double smooth_step(double z, double gamma);
double smooth_step_deriv(double z, double gamma);

// Evaluation state for one graph. Values and gradients live in preallocated
// buffers that are reused across calls; leaf storage stays with the caller
// and is attached by pointer, so param updates need no copying.
class Workspace {
 public:
  explicit Workspace(const Graph& g);

  void bind(int leaf_id, const Tensor* storage);
  void bind(const std::string& leaf_name, const Tensor* storage);

  // Restrict which leaves receive gradients; backward skips every branch
  // that cannot reach one of them. Default: all trainable leaves.
  void set_grad_leaves(const std::vector<int>& leaf_ids);

  // Forward pass over the whole graph. Shape errors cite the node id.
  void eval();

  // Reverse pass from scalar seed nodes. May be called repeatedly after one
  // eval (each call starts fresh). Accumulates over the given seeds.
  void backward(std::span<const std::pair<int, double>> seeds);

  const Tensor& value(int node) const;
  double scalar_value(int node) const;
  // Valid after backward for nodes that reach a grad leaf and were touched.
  const Tensor& grad(int node) const;
  bool grad_touched(int node) const {
    return grad_pass_[static_cast<std::size_t>(node)] == pass_;
  }

 private:
  void forward_node(int i);
  void backward_node(int i);
  Tensor& grad_buf(int node, bool& fresh);
  Tensor& grad_accum_target(int node);
  void ensure_zeroed(int node);
  [[noreturn]] void fail(int node, const std::string& msg) const;

  const Graph* g_;
  std::vector<Tensor> vals_;             // op outputs (leaves use bound ptrs)
  std::vector<const Tensor*> bound_;     // leaf storage
  std::vector<Tensor> grads_;
  std::vector<std::uint32_t> grad_pass_;  // pass id when grad was first written
  std::uint32_t pass_ = 0;
  std::vector<char> reach_;  // node can reach a requested grad leaf
};

// Convenience wrappers used by tests and tools (the trainer drives a
// Workspace directly). Leaves are matched by name; all leaves must be given.
Tensor eval_node(const Graph& g, const NamedTensors& leaves, int node);
// Gradients of a scalar node with respect to every leaf, by name.
NamedTensors backward_all(const Graph& g, const NamedTensors& leaves, int scalar_node);

}  // namespace ranmtl
