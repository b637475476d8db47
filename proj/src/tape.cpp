#include "nabi/tape.hpp"

#include <algorithm>
#include <cmath>

#include "nabi/linalg.hpp"

namespace nabi::ndiff {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kConv2d: return "conv2d";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kNeg: return "neg";
    case Op::kMulScalar: return "mul_scalar";
    case Op::kAddScalar: return "add_scalar";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kSoftplus: return "softplus";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kLogsumexp: return "logsumexp";
    case Op::kReshape: return "reshape";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kExternal: return "external";
  }
  return "?";
}

std::string shape_str(const std::vector<int64_t>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

Tape::NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::check_finite(NodeId id) {
  const Tensor& t = val(id);
  for (double v : t.values) {
    if (!std::isfinite(v))
      throw NonFiniteError(std::string("non-finite value in op '") +
                           op_name(nodes_[static_cast<size_t>(id)].op) + "'");
  }
}

Tape::NodeId Tape::constant(Tensor v) {
  Node n;
  n.op = Op::kLeaf;
  n.val = std::move(v);
  NodeId id = push(std::move(n));
  check_finite(id);
  return id;
}

Tape::NodeId Tape::param(const Tensor* t) {
  Node n;
  n.op = Op::kLeaf;
  n.shared = t;
  n.needs_grad = true;
  NodeId id = push(std::move(n));
  param_leaves_.emplace_back(t, id);
  check_finite(id);
  return id;
}

Tape::NodeId Tape::input(const Tensor* t) {
  Node n;
  n.op = Op::kLeaf;
  n.shared = t;
  NodeId id = push(std::move(n));
  check_finite(id);
  return id;
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  Node n;
  n.op = Op::kMatmul;
  n.in = {a, b, -1};
  n.n_in = 2;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  if (A.rank() == 2 && B.rank() == 2) {
    if (A.shape[1] != B.shape[0])
      throw ShapeError("matmul: inner extents differ " + shape_str(A.shape) +
                       " x " + shape_str(B.shape));
    int m = static_cast<int>(A.shape[0]);
    int k = static_cast<int>(A.shape[1]);
    int cols = static_cast<int>(B.shape[1]);
    n.val = Tensor({m, cols});
    linalg::gemm_nn(m, cols, k, A.values.data(), B.values.data(), n.val.values.data());
  } else if (A.rank() == 2 && B.rank() == 1) {
    if (A.shape[1] != B.shape[0])
      throw ShapeError("matmul: inner extents differ " + shape_str(A.shape) +
                       " x " + shape_str(B.shape));
    int m = static_cast<int>(A.shape[0]);
    int k = static_cast<int>(A.shape[1]);
    n.val = Tensor({m});
    for (int i = 0; i < m; ++i) {
      const double* __restrict row = A.values.data() + static_cast<size_t>(i) * k;
      const double* __restrict x = B.values.data();
      double s = 0;
      for (int p = 0; p < k; ++p) s += row[p] * x[p];
      n.val.values[static_cast<size_t>(i)] = s;
    }
  } else {
    throw ShapeError("matmul: unsupported ranks " + shape_str(A.shape) + " x " +
                     shape_str(B.shape));
  }
  NodeId id = push(std::move(n));
  check_finite(id);
  return id;
}

namespace {

struct ConvDims {
  int ci, h, w, co, kh, kw, stride, pad, oh, ow, P, K;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                   int pad) {
  if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1)
    throw ShapeError("conv2d: expected x(ci,h,w), w(co,ci,kh,kw), b(co)");
  ConvDims d;
  d.ci = static_cast<int>(x.shape[0]);
  d.h = static_cast<int>(x.shape[1]);
  d.w = static_cast<int>(x.shape[2]);
  d.co = static_cast<int>(w.shape[0]);
  d.kh = static_cast<int>(w.shape[2]);
  d.kw = static_cast<int>(w.shape[3]);
  d.stride = stride;
  d.pad = pad;
  if (w.shape[1] != d.ci)
    throw ShapeError("conv2d: kernel in-channels mismatch");
  if (b.shape[0] != d.co) throw ShapeError("conv2d: bias width mismatch");
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: bad stride/pad");
  int eh = d.h + 2 * pad - d.kh;
  int ew = d.w + 2 * pad - d.kw;
  if (eh < 0 || ew < 0) throw ShapeError("conv2d: kernel larger than padded input");
  d.oh = eh / stride + 1;
  d.ow = ew / stride + 1;
  d.P = d.oh * d.ow;
  d.K = d.ci * d.kh * d.kw;
  return d;
}

void im2col(const ConvDims& d, const double* x, double* col) {
  for (int oy = 0; oy < d.oh; ++oy) {
    for (int ox = 0; ox < d.ow; ++ox) {
      double* __restrict dst = col + (static_cast<size_t>(oy) * d.ow + ox) * d.K;
      int iy0 = oy * d.stride - d.pad;
      int ix0 = ox * d.stride - d.pad;
      for (int c = 0; c < d.ci; ++c) {
        const double* __restrict plane = x + static_cast<size_t>(c) * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky) {
          int iy = iy0 + ky;
          for (int kx = 0; kx < d.kw; ++kx) {
            int ix = ix0 + kx;
            *dst++ = (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                         ? plane[static_cast<size_t>(iy) * d.w + ix]
                         : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvDims& d, const double* col, double* dx) {
  for (int oy = 0; oy < d.oh; ++oy) {
    for (int ox = 0; ox < d.ow; ++ox) {
      const double* __restrict src = col + (static_cast<size_t>(oy) * d.ow + ox) * d.K;
      int iy0 = oy * d.stride - d.pad;
      int ix0 = ox * d.stride - d.pad;
      for (int c = 0; c < d.ci; ++c) {
        double* __restrict plane = dx + static_cast<size_t>(c) * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky) {
          int iy = iy0 + ky;
          for (int kx = 0; kx < d.kw; ++kx) {
            int ix = ix0 + kx;
            double v = *src++;
            if (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
              plane[static_cast<size_t>(iy) * d.w + ix] += v;
          }
        }
      }
    }
  }
}

}  // namespace

Tape::NodeId Tape::conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
  const Tensor& X = val(x);
  const Tensor& W = val(w);
  const Tensor& B = val(b);
  ConvDims d = conv_dims(X, W, B, stride, pad);
  Node n;
  n.op = Op::kConv2d;
  n.in = {x, w, b};
  n.n_in = 3;
  n.needs_grad = nodes_[x].needs_grad || nodes_[w].needs_grad || nodes_[b].needs_grad;
  n.iattr = {stride, pad};
  n.aux.assign(static_cast<size_t>(d.P) * d.K, 0.0);
  im2col(d, X.values.data(), n.aux.data());
  // tmp(P, co) = col(P, K) . W(co, K)^T, then transpose into (co, oh, ow).
  std::vector<double> tmp(static_cast<size_t>(d.P) * d.co, 0.0);
  linalg::gemm_nt(d.P, d.co, d.K, n.aux.data(), W.values.data(), tmp.data());
  n.val = Tensor({d.co, d.oh, d.ow});
  for (int c = 0; c < d.co; ++c) {
    double bias = B.values[static_cast<size_t>(c)];
    double* __restrict out = n.val.values.data() + static_cast<size_t>(c) * d.P;
    for (int p = 0; p < d.P; ++p) out[p] = tmp[static_cast<size_t>(p) * d.co + c] + bias;
  }
  NodeId id = push(std::move(n));
  check_finite(id);
  return id;
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (!same_shape(A, B))
    throw ShapeError("add: shape mismatch " + shape_str(A.shape) + " vs " +
                     shape_str(B.shape));
  Node n;
  n.op = Op::kAdd;
  n.in = {a, b, -1};
  n.n_in = 2;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  n.val = Tensor(A.shape);
  for (size_t i = 0; i < A.values.size(); ++i)
    n.val.values[i] = A.values[i] + B.values[i];
  NodeId id = push(std::move(n));
  check_finite(id);
  return id;
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (!same_shape(A, B))
    throw ShapeError("sub: shape mismatch " + shape_str(A.shape) + " vs " +
                     shape_str(B.shape));
  Node n;
  n.op = Op::kSub;
  n.in = {a, b, -1};
  n.n_in = 2;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  n.val = Tensor(A.shape);
  for (size_t i = 0; i < A.values.size(); ++i)
    n.val.values[i] = A.values[i] - B.values[i];
  NodeId id = push(std::move(n));
  check_finite(id);
  return id;
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (!same_shape(A, B))
    throw ShapeError("mul: shape mismatch " + shape_str(A.shape) + " vs " +
                     shape_str(B.shape));
  Node n;
  n.op = Op::kMul;
  n.in = {a, b, -1};
  n.n_in = 2;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  n.val = Tensor(A.shape);
  for (size_t i = 0; i < A.values.size(); ++i)
    n.val.values[i] = A.values[i] * B.values[i];
  NodeId id = push(std::move(n));
  check_finite(id);
  return id;
}

Tape::NodeId Tape::unary_map(Op op, NodeId a) {
  const Tensor& A = val(a);
  Node n;
  n.op = op;
  n.in = {a, -1, -1};
  n.n_in = 1;
  n.needs_grad = nodes_[a].needs_grad;
  n.val = Tensor(A.shape);
  const double* __restrict x = A.values.data();
  double* __restrict y = n.val.values.data();
  size_t m = A.values.size();
  switch (op) {
    case Op::kNeg:
      for (size_t i = 0; i < m; ++i) y[i] = -x[i];
      break;
    case Op::kRelu:
      for (size_t i = 0; i < m; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    case Op::kSigmoid:
      for (size_t i = 0; i < m; ++i) y[i] = stable_sigmoid(x[i]);
      break;
    case Op::kTanh:
      for (size_t i = 0; i < m; ++i) y[i] = std::tanh(x[i]);
      break;
    case Op::kSoftplus:
      for (size_t i = 0; i < m; ++i) y[i] = stable_softplus(x[i]);
      break;
    case Op::kExp:
      for (size_t i = 0; i < m; ++i) y[i] = std::exp(x[i]);
      break;
    case Op::kLog:
      for (size_t i = 0; i < m; ++i) y[i] = std::log(x[i]);
      break;
    default:
      throw std::logic_error("unary_map: bad op");
  }
  NodeId id = push(std::move(n));
  check_finite(id);
  return id;
}

Tape::NodeId Tape::neg(NodeId a) { return unary_map(Op::kNeg, a); }
Tape::NodeId Tape::relu(NodeId a) { return unary_map(Op::kRelu, a); }
Tape::NodeId Tape::sigmoid(NodeId a) { return unary_map(Op::kSigmoid, a); }
Tape::NodeId Tape::tanh(NodeId a) { return unary_map(Op::kTanh, a); }
Tape::NodeId Tape::softplus(NodeId a) { return unary_map(Op::kSoftplus, a); }
Tape::NodeId Tape::exp(NodeId a) { return unary_map(Op::kExp, a); }
Tape::NodeId Tape::log(NodeId a) { return unary_map(Op::kLog, a); }

Tape::NodeId Tape::mul_scalar(NodeId a, double c) {
  const Tensor& A = val(a);
  Node n;
  n.op = Op::kMulScalar;
  n.in = {a, -1, -1};
  n.n_in = 1;
  n.attr = c;
  n.needs_grad = nodes_[a].needs_grad;
  n.val = Tensor(A.shape);
  for (size_t i = 0; i < A.values.size(); ++i) n.val.values[i] = A.values[i] * c;
  NodeId id = push(std::move(n));
  check_finite(id);
  return id;
}

Tape::NodeId Tape::add_scalar(NodeId a, double c) {
  const Tensor& A = val(a);
  Node n;
  n.op = Op::kAddScalar;
  n.in = {a, -1, -1};
  n.n_in = 1;
  n.attr = c;
  n.needs_grad = nodes_[a].needs_grad;
  n.val = Tensor(A.shape);
  for (size_t i = 0; i < A.values.size(); ++i) n.val.values[i] = A.values[i] + c;
  NodeId id = push(std::move(n));
  check_finite(id);
  return id;
}

Tape::NodeId Tape::sum(NodeId a) {
  const Tensor& A = val(a);
  Node n;
  n.op = Op::kSum;
  n.in = {a, -1, -1};
  n.n_in = 1;
  n.needs_grad = nodes_[a].needs_grad;
  double s = 0;
  for (double v : A.values) s += v;
  n.val = Tensor::scalar(s);
  NodeId id = push(std::move(n));
  check_finite(id);
  return id;
}

Tape::NodeId Tape::mean(NodeId a) {
  const Tensor& A = val(a);
  if (A.numel() == 0) throw ShapeError("mean: empty tensor");
  Node n;
  n.op = Op::kMean;
  n.in = {a, -1, -1};
  n.n_in = 1;
  n.needs_grad = nodes_[a].needs_grad;
  double s = 0;
  for (double v : A.values) s += v;
  n.val = Tensor::scalar(s / static_cast<double>(A.numel()));
  NodeId id = push(std::move(n));
  check_finite(id);
  return id;
}

Tape::NodeId Tape::logsumexp(NodeId a) {
  const Tensor& A = val(a);
  if (A.numel() == 0) throw ShapeError("logsumexp: empty tensor");
  Node n;
  n.op = Op::kLogsumexp;
  n.in = {a, -1, -1};
  n.n_in = 1;
  n.needs_grad = nodes_[a].needs_grad;
  double m = A.values[0];
  for (double v : A.values) m = std::max(m, v);
  double s = 0;
  for (double v : A.values) s += std::exp(v - m);
  n.val = Tensor::scalar(m + std::log(s));
  NodeId id = push(std::move(n));
  check_finite(id);
  return id;
}

Tape::NodeId Tape::reshape(NodeId a, std::vector<int64_t> shape) {
  const Tensor& A = val(a);
  if (Tensor::numel_of(shape) != A.numel())
    throw ShapeError("reshape: element count mismatch");
  Node n;
  n.op = Op::kReshape;
  n.in = {a, -1, -1};
  n.n_in = 1;
  n.needs_grad = nodes_[a].needs_grad;
  n.val = Tensor(std::move(shape), A.values);
  return push(std::move(n));
}

Tape::NodeId Tape::concat(NodeId a, NodeId b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.rank() == 0 || B.rank() == 0) throw ShapeError("concat: scalars not allowed");
  if (A.rank() != B.rank() ||
      !std::equal(A.shape.begin() + 1, A.shape.end(), B.shape.begin() + 1))
    throw ShapeError("concat: trailing shape mismatch");
  Node n;
  n.op = Op::kConcat;
  n.in = {a, b, -1};
  n.n_in = 2;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  std::vector<int64_t> shape = A.shape;
  shape[0] += B.shape[0];
  n.val = Tensor(shape);
  std::copy(A.values.begin(), A.values.end(), n.val.values.begin());
  std::copy(B.values.begin(), B.values.end(),
            n.val.values.begin() + static_cast<int64_t>(A.values.size()));
  return push(std::move(n));
}

Tape::NodeId Tape::slice(NodeId a, int64_t start, int64_t len) {
  const Tensor& A = val(a);
  if (A.rank() == 0) throw ShapeError("slice: scalar input");
  if (start < 0 || len < 0 || start + len > A.shape[0])
    throw ShapeError("slice: range out of bounds");
  Node n;
  n.op = Op::kSlice;
  n.in = {a, -1, -1};
  n.n_in = 1;
  n.needs_grad = nodes_[a].needs_grad;
  n.iattr = {start, len};
  std::vector<int64_t> shape = A.shape;
  shape[0] = len;
  int64_t row = A.numel() / A.shape[0];
  n.val = Tensor(shape);
  std::copy(A.values.begin() + start * row, A.values.begin() + (start + len) * row,
            n.val.values.begin());
  return push(std::move(n));
}

Tape::NodeId Tape::external(NodeId a, double value, double dvalue) {
  const Tensor& A = val(a);
  if (!A.is_scalar()) throw ShapeError("external: scalar input expected");
  Node n;
  n.op = Op::kExternal;
  n.in = {a, -1, -1};
  n.n_in = 1;
  n.needs_grad = nodes_[a].needs_grad;
  n.val = Tensor::scalar(value);
  n.aux = {dvalue};
  NodeId id = push(std::move(n));
  check_finite(id);
  if (!std::isfinite(dvalue))
    throw NonFiniteError("non-finite value in op 'external' (derivative)");
  return id;
}

std::span<const double> Tape::grad(NodeId id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  return {n.grad.data(), n.grad.size()};
}

void Tape::backward(NodeId loss) {
  if (!val(loss).is_scalar()) throw ShapeError("backward: loss is not scalar");
  const double one = 1.0;
  backward_seeded(loss, {&one, 1});
}

void Tape::backward_seeded(NodeId root, std::span<const double> seed) {
  if (backward_done_)
    throw std::logic_error("Tape: backward already ran on this tape");
  backward_done_ = true;
  Node& r = nodes_[static_cast<size_t>(root)];
  if (static_cast<int64_t>(seed.size()) != val(root).numel())
    throw ShapeError("backward_seeded: seed size mismatch");
  r.grad.assign(seed.begin(), seed.end());
  run_backward(root);
}

void Tape::run_backward(NodeId root) {
  // Allocate gradient buffers for every node that can receive one.
  for (size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad && n.grad.empty())
      n.grad.assign(static_cast<size_t>(val(static_cast<NodeId>(i)).numel()), 0.0);
  }

  for (NodeId id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) continue;
    if (n.op == Op::kLeaf) continue;
    const double* g = n.grad.data();
    auto in_grad = [&](int slot) -> double* {
      NodeId iid = n.in[static_cast<size_t>(slot)];
      Node& m = nodes_[static_cast<size_t>(iid)];
      return m.grad.empty() ? nullptr : m.grad.data();
    };
    const Tensor& out = val(id);
    switch (n.op) {
      case Op::kMatmul: {
        const Tensor& A = val(n.in[0]);
        const Tensor& B = val(n.in[1]);
        double* dA = in_grad(0);
        double* dB = in_grad(1);
        if (B.rank() == 2) {
          int m = static_cast<int>(A.shape[0]);
          int k = static_cast<int>(A.shape[1]);
          int c = static_cast<int>(B.shape[1]);
          if (dA) linalg::gemm_nt(m, k, c, g, B.values.data(), dA);
          if (dB) linalg::gemm_tn(k, c, m, A.values.data(), g, dB);
        } else {
          int m = static_cast<int>(A.shape[0]);
          int k = static_cast<int>(A.shape[1]);
          if (dA) {
            for (int i = 0; i < m; ++i) {
              double gv = g[i];
              const double* __restrict x = B.values.data();
              double* __restrict row = dA + static_cast<size_t>(i) * k;
              for (int p = 0; p < k; ++p) row[p] += gv * x[p];
            }
          }
          if (dB) {
            for (int i = 0; i < m; ++i) {
              double gv = g[i];
              const double* __restrict row = A.values.data() + static_cast<size_t>(i) * k;
              for (int p = 0; p < k; ++p) dB[p] += gv * row[p];
            }
          }
        }
        break;
      }
      case Op::kConv2d: {
        const Tensor& X = val(n.in[0]);
        const Tensor& W = val(n.in[1]);
        const Tensor& B = val(n.in[2]);
        ConvDims d = conv_dims(X, W, B, static_cast<int>(n.iattr[0]),
                               static_cast<int>(n.iattr[1]));
        double* dX = in_grad(0);
        double* dW = in_grad(1);
        double* dBias = in_grad(2);
        // g laid out (co, P); dtmp is its (P, co) transpose.
        std::vector<double> dtmp(static_cast<size_t>(d.P) * d.co);
        for (int c = 0; c < d.co; ++c)
          for (int p = 0; p < d.P; ++p)
            dtmp[static_cast<size_t>(p) * d.co + c] = g[static_cast<size_t>(c) * d.P + p];
        if (dBias) {
          for (int c = 0; c < d.co; ++c) {
            double s = 0;
            const double* __restrict gc = g + static_cast<size_t>(c) * d.P;
            for (int p = 0; p < d.P; ++p) s += gc[p];
            dBias[c] += s;
          }
        }
        if (dW)
          linalg::gemm_tn(d.co, d.K, d.P, dtmp.data(), n.aux.data(), dW);
        if (dX) {
          std::vector<double> dcol(static_cast<size_t>(d.P) * d.K, 0.0);
          linalg::gemm_nn(d.P, d.K, d.co, dtmp.data(), W.values.data(), dcol.data());
          col2im_add(d, dcol.data(), dX);
        }
        break;
      }
      case Op::kAdd: {
        for (int slot = 0; slot < 2; ++slot) {
          double* di = in_grad(slot);
          if (di)
            for (int64_t i = 0; i < out.numel(); ++i) di[i] += g[i];
        }
        break;
      }
      case Op::kSub: {
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < out.numel(); ++i) d0[i] += g[i];
        if (double* d1 = in_grad(1))
          for (int64_t i = 0; i < out.numel(); ++i) d1[i] -= g[i];
        break;
      }
      case Op::kMul: {
        const Tensor& A = val(n.in[0]);
        const Tensor& B = val(n.in[1]);
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < out.numel(); ++i) d0[i] += g[i] * B.values[static_cast<size_t>(i)];
        if (double* d1 = in_grad(1))
          for (int64_t i = 0; i < out.numel(); ++i) d1[i] += g[i] * A.values[static_cast<size_t>(i)];
        break;
      }
      case Op::kNeg: {
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < out.numel(); ++i) d0[i] -= g[i];
        break;
      }
      case Op::kMulScalar: {
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < out.numel(); ++i) d0[i] += g[i] * n.attr;
        break;
      }
      case Op::kAddScalar: {
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < out.numel(); ++i) d0[i] += g[i];
        break;
      }
      case Op::kRelu: {
        const Tensor& X = val(n.in[0]);
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < out.numel(); ++i)
            if (X.values[static_cast<size_t>(i)] > 0.0) d0[i] += g[i];
        break;
      }
      case Op::kSigmoid: {
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < out.numel(); ++i) {
            double y = out.values[static_cast<size_t>(i)];
            d0[i] += g[i] * y * (1.0 - y);
          }
        break;
      }
      case Op::kTanh: {
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < out.numel(); ++i) {
            double y = out.values[static_cast<size_t>(i)];
            d0[i] += g[i] * (1.0 - y * y);
          }
        break;
      }
      case Op::kSoftplus: {
        const Tensor& X = val(n.in[0]);
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < out.numel(); ++i)
            d0[i] += g[i] * stable_sigmoid(X.values[static_cast<size_t>(i)]);
        break;
      }
      case Op::kExp: {
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < out.numel(); ++i)
            d0[i] += g[i] * out.values[static_cast<size_t>(i)];
        break;
      }
      case Op::kLog: {
        const Tensor& X = val(n.in[0]);
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < out.numel(); ++i)
            d0[i] += g[i] / X.values[static_cast<size_t>(i)];
        break;
      }
      case Op::kSum: {
        const Tensor& X = val(n.in[0]);
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < X.numel(); ++i) d0[i] += g[0];
        break;
      }
      case Op::kMean: {
        const Tensor& X = val(n.in[0]);
        double gv = g[0] / static_cast<double>(X.numel());
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < X.numel(); ++i) d0[i] += gv;
        break;
      }
      case Op::kLogsumexp: {
        const Tensor& X = val(n.in[0]);
        double lse = out.values[0];
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < X.numel(); ++i)
            d0[i] += g[0] * std::exp(X.values[static_cast<size_t>(i)] - lse);
        break;
      }
      case Op::kReshape: {
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < out.numel(); ++i) d0[i] += g[i];
        break;
      }
      case Op::kConcat: {
        const Tensor& A = val(n.in[0]);
        int64_t na = A.numel();
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < na; ++i) d0[i] += g[i];
        if (double* d1 = in_grad(1))
          for (int64_t i = na; i < out.numel(); ++i) d1[i - na] += g[i];
        break;
      }
      case Op::kSlice: {
        const Tensor& X = val(n.in[0]);
        int64_t row = X.numel() / X.shape[0];
        int64_t off = n.iattr[0] * row;
        if (double* d0 = in_grad(0))
          for (int64_t i = 0; i < out.numel(); ++i) d0[off + i] += g[i];
        break;
      }
      case Op::kExternal: {
        if (double* d0 = in_grad(0)) d0[0] += g[0] * n.aux[0];
        break;
      }
      case Op::kLeaf:
        break;
    }
  }

  // Fold leaf gradients into bound parameter tensors.
  if (!fold_params_) return;
  for (auto& n : nodes_) {
    if (n.op == Op::kLeaf && n.needs_grad && n.shared && !n.grad.empty()) {
      auto* t = const_cast<Tensor*>(n.shared);
      t->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) (*t->grad)[i] += n.grad[i];
    }
  }
}

}  // namespace nabi::ndiff
