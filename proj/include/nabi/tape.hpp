#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nabi/tensor.hpp"

namespace nabi::ndiff {

enum class Op : uint8_t {
  kLeaf,
  kMatmul,
  kConv2d,
  kAdd,
  kSub,
  kMul,
  kNeg,
  kMulScalar,
  kAddScalar,
  kRelu,
  kSigmoid,
  kTanh,
  kSoftplus,
  kExp,
  kLog,
  kSum,
  kMean,
  kLogsumexp,
  kReshape,
  kConcat,
  kSlice,
  kExternal,
};

const char* op_name(Op op);

// Raised when an op produces a non-finite value; carries the offending op.
struct NonFiniteError : std::runtime_error {
  explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Reverse-mode tape. Nodes are appended in execution order, which is also a
// topological order; backward() walks it in reverse. One tape is
// single-threaded; tensors not attached to any tape are plain values.
class Tape {
 public:
  using NodeId = int32_t;

  struct Node {
    Op op = Op::kLeaf;
    std::array<NodeId, 3> in{-1, -1, -1};
    int n_in = 0;
    Tensor val;                    // owned output (unused for shared leaves)
    const Tensor* shared = nullptr;  // leaf bound to external storage
    std::vector<double> grad;
    bool needs_grad = false;
    double attr = 0.0;               // scalar op attribute
    std::vector<int64_t> iattr;      // conv: {stride,pad}; slice: {start,len}; concat: {n0}
    std::vector<double> aux;         // conv: im2col cache; external: d(out)/d(in)
  };

  Tape() { nodes_.reserve(64); }

  // Leaves. constant(): no gradient tracked. param(): trainable, gradient
  // accumulated. input(): external data, no gradient.
  NodeId constant(Tensor v);
  NodeId param(const Tensor* t);
  NodeId input(const Tensor* t);

  // Ops (forward recorded immediately; all outputs checked finite).
  NodeId matmul(NodeId a, NodeId b);
  // x: (in_c, h, w); w: (out_c, in_c, kh, kw); b: (out_c). Cross-correlation
  // with zero padding.
  NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId neg(NodeId a);
  NodeId mul_scalar(NodeId a, double c);
  NodeId add_scalar(NodeId a, double c);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId softplus(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId logsumexp(NodeId a);
  NodeId reshape(NodeId a, std::vector<int64_t> shape);
  NodeId concat(NodeId a, NodeId b);  // along axis 0
  NodeId slice(NodeId a, int64_t start, int64_t len);  // along axis 0
  // Externally evaluated differentiable scalar function of a scalar node:
  // value and d(value)/d(input) are supplied by the caller.
  NodeId external(NodeId a, double value, double dvalue);

  const Tensor& val(NodeId id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.shared ? *n.shared : n.val;
  }
  std::span<const double> grad(NodeId id) const;
  const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
  size_t size() const { return nodes_.size(); }

  // Reverse pass from a scalar loss; leaf gradients land in node grads and,
  // for param() leaves, are also accumulated into the bound tensor's grad.
  void backward(NodeId loss);
  // Reverse pass seeded with an upstream gradient of the node's shape.
  void backward_seeded(NodeId root, std::span<const double> seed);

  // When disabled, param-leaf gradients stay on the tape nodes and the caller
  // harvests them (used when many tapes run backward concurrently).
  void set_param_fold(bool on) { fold_params_ = on; }
  const std::vector<std::pair<const Tensor*, NodeId>>& param_leaves() const {
    return param_leaves_;
  }

 private:
  NodeId push(Node n);
  NodeId unary_map(Op op, NodeId a);
  void check_finite(NodeId id);
  void run_backward(NodeId root);

  std::vector<Node> nodes_;
  std::vector<std::pair<const Tensor*, NodeId>> param_leaves_;
  bool fold_params_ = true;
  bool backward_done_ = false;
};

}  // namespace nabi::ndiff
