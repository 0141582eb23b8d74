#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrfr/tensor.hpp"

namespace lrfr {

// Reverse-mode differentiation over a fixed primitive op set. Graphs are
// tapes: builders may only reference already-created nodes, so the node
// order is a topological order and evaluation is a single forward sweep.
// Evaluation is single-threaded and deterministic for a fixed kernel
// backend; backprop replays the tape in reverse over a cache produced by
// evaluate().

enum class OpKind {
  input,
  add,        // elementwise; rhs may be a row vector broadcast over a 2-D lhs
  sub,
  mul,
  scalar_mul,
  matmul,     // 2-D x 2-D, optional transpose of rhs
  conv2d,     // NCHW x (Cout,Cin,kh,kw) + bias, stride/pad attrs
  prelu,      // NCHW with per-channel slopes
  abs,
  exp,
  log,
  sum,        // full reduction -> shape {1}
  mean,
  square,
  sqrt,
  l2_normalize,     // rows of the last dimension, eps-guarded
  global_avg_pool,  // NCHW -> N x C
};

const char* op_name(OpKind k);

struct OpNode {
  OpKind kind = OpKind::input;
  std::vector<int> inputs;
  std::string name;       // input nodes
  double scalar = 0.0;    // scalar_mul
  int stride = 1;         // conv2d
  int pad = 0;            // conv2d
  bool trans_b = false;   // matmul
};

class OpGraph {
 public:
  using NodeId = int;

  NodeId input(std::string name);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scalar_mul(NodeId a, double s);
  NodeId matmul(NodeId a, NodeId b, bool trans_b = false);
  NodeId conv2d(NodeId x, NodeId w, NodeId bias, int stride, int pad);
  NodeId prelu(NodeId x, NodeId slopes);
  NodeId abs(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId square(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId l2_normalize(NodeId a);
  NodeId global_avg_pool(NodeId x);

  void set_output(NodeId id);
  NodeId output() const { return output_; }
  const std::vector<OpNode>& nodes() const { return nodes_; }
  const std::vector<std::string>& input_names() const { return input_names_; }
  uint64_t revision() const { return revision_; }

 private:
  NodeId push(OpNode n);
  NodeId check_id(NodeId id) const;

  std::vector<OpNode> nodes_;
  std::vector<std::string> input_names_;
  NodeId output_ = -1;
  uint64_t revision_ = 0;
};

struct EvalCache {
  uint64_t graph_revision = 0;
  std::vector<Tensor> values;         // one per node
  std::vector<bool> requires_grad;    // per node, propagated from leaves
};

struct EvalResult {
  Tensor output;
  EvalCache cache;
};

// Forward sweep. Every graph input must be bound by name; each node's
// output is checked finite and cached for backprop.
EvalResult evaluate(const OpGraph& g, const NamedTensors& inputs);

// Reverse sweep from seed_grad (shape of the output). Returns gradients
// for every input leaf whose bound tensor had requires_grad set.
NamedTensors backprop(const OpGraph& g, const EvalCache& cache,
                      const Tensor& seed_grad);

struct GradReport {
  struct Entry {
    std::string param;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
  };
  std::vector<Entry> entries;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central-difference check of backprop for a scalar-output graph:
// (f(x+eps) - f(x-eps)) / 2 eps per coordinate of every requires_grad
// input. The error is |analytic - numeric| / max(1, |analytic|, |numeric|).
GradReport grad_check(const OpGraph& g, const NamedTensors& inputs,
                      double epsilon, double tolerance = 1e-4);

}  // namespace lrfr
