#include "nabi/flows.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nabi/stats.hpp"

namespace nabi::flows {

using nets::Dense;

double clamp_log_scale(double raw) { return 2.0 * std::tanh(0.5 * raw); }

namespace {

void zero_last_layer(Mlp& net) {
  Dense& last = net.layers.back();
  std::fill(last.W.values.begin(), last.W.values.end(), 0.0);
  std::fill(last.b.values.begin(), last.b.values.end(), 0.0);
}

std::vector<double> cond_input(std::span<const double> pass,
                               std::span<const double> ctx) {
  if (pass.empty() && ctx.empty()) return {1.0};
  std::vector<double> in;
  in.reserve(pass.size() + ctx.size());
  in.insert(in.end(), pass.begin(), pass.end());
  in.insert(in.end(), ctx.begin(), ctx.end());
  return in;
}

}  // namespace

ParamSet CouplingFlow::params(const std::string& prefix) {
  ParamSet ps;
  for (size_t l = 0; l < blocks.size(); ++l) {
    auto s = blocks[l].scale_net.params(prefix + ".block" + std::to_string(l) + ".scale");
    auto t = blocks[l].shift_net.params(prefix + ".block" + std::to_string(l) + ".shift");
    ps.insert(ps.end(), s.begin(), s.end());
    ps.insert(ps.end(), t.begin(), t.end());
  }
  return ps;
}

CouplingFlow make_coupling_flow(int dim, int ctx_width, int n_blocks, Rng& rng,
                                const std::vector<int>& hidden) {
  if (dim < 1) throw std::invalid_argument("make_coupling_flow: dim must be >= 1");
  CouplingFlow f;
  f.dim = dim;
  f.ctx_width = ctx_width;
  int d_pass = dim / 2;
  int d_act = dim - d_pass;
  int in_w = std::max(1, d_pass + ctx_width);
  std::vector<int> widths;
  widths.push_back(in_w);
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(d_act);
  for (int l = 0; l < n_blocks; ++l) {
    CouplingBlock b;
    b.dim = dim;
    b.d_pass = d_pass;
    b.scale_net = nets::make_mlp(widths, nets::Act::kRelu, nets::Act::kIdentity, rng);
    b.shift_net = nets::make_mlp(widths, nets::Act::kRelu, nets::Act::kIdentity, rng);
    zero_last_layer(b.scale_net);
    zero_last_layer(b.shift_net);
    f.blocks.push_back(std::move(b));
  }
  return f;
}

std::vector<double> flow_forward(const CouplingFlow& f, std::span<const double> theta,
                                 std::span<const double> ctx, double* log_det) {
  if (static_cast<int>(theta.size()) != f.dim)
    throw ndiff::ShapeError("flow_forward: dimension mismatch");
  if (static_cast<int>(ctx.size()) != f.ctx_width)
    throw ndiff::ShapeError("flow_forward: context width mismatch");
  std::vector<double> cur(theta.begin(), theta.end());
  double ld = 0.0;
  for (size_t l = 0; l < f.blocks.size(); ++l) {
    if (l > 0) std::reverse(cur.begin(), cur.end());
    const CouplingBlock& b = f.blocks[l];
    std::span<const double> pass(cur.data(), static_cast<size_t>(b.d_pass));
    std::vector<double> in = cond_input(pass, ctx);
    std::vector<double> s_raw = nets::mlp_forward(b.scale_net, in);
    std::vector<double> shift = nets::mlp_forward(b.shift_net, in);
    for (int i = b.d_pass; i < b.dim; ++i) {
      double s = clamp_log_scale(s_raw[static_cast<size_t>(i - b.d_pass)]);
      cur[static_cast<size_t>(i)] =
          cur[static_cast<size_t>(i)] * std::exp(s) + shift[static_cast<size_t>(i - b.d_pass)];
      ld += s;
    }
  }
  for (double v : cur)
    if (!std::isfinite(v)) throw ndiff::NonFiniteError("flow_forward: non-finite output");
  if (log_det) *log_det = ld;
  return cur;
}

std::vector<double> flow_inverse(const CouplingFlow& f, std::span<const double> z,
                                 std::span<const double> ctx) {
  if (static_cast<int>(z.size()) != f.dim)
    throw ndiff::ShapeError("flow_inverse: dimension mismatch");
  std::vector<double> cur(z.begin(), z.end());
  for (size_t li = f.blocks.size(); li-- > 0;) {
    const CouplingBlock& b = f.blocks[li];
    std::span<const double> pass(cur.data(), static_cast<size_t>(b.d_pass));
    std::vector<double> in = cond_input(pass, ctx);
    std::vector<double> s_raw = nets::mlp_forward(b.scale_net, in);
    std::vector<double> shift = nets::mlp_forward(b.shift_net, in);
    for (int i = b.d_pass; i < b.dim; ++i) {
      double s = clamp_log_scale(s_raw[static_cast<size_t>(i - b.d_pass)]);
      cur[static_cast<size_t>(i)] =
          (cur[static_cast<size_t>(i)] - shift[static_cast<size_t>(i - b.d_pass)]) *
          std::exp(-s);
    }
    if (li > 0) std::reverse(cur.begin(), cur.end());
  }
  for (double v : cur)
    if (!std::isfinite(v)) throw ndiff::NonFiniteError("flow_inverse: non-finite output");
  return cur;
}

double log_density(const CouplingFlow& f, std::span<const double> theta,
                   std::span<const double> ctx) {
  double ld = 0.0;
  std::vector<double> z = flow_forward(f, theta, ctx, &ld);
  double q = 0.0;
  for (double v : z) q += v * v;
  return -0.5 * static_cast<double>(f.dim) * stats::kLog2Pi - 0.5 * q + ld;
}

std::vector<std::vector<double>> sample(const CouplingFlow& f,
                                        std::span<const double> ctx, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<size_t>(n));
  std::vector<double> z(static_cast<size_t>(f.dim));
  for (int i = 0; i < n; ++i) {
    for (double& v : z) v = rng.normal();
    out.push_back(flow_inverse(f, z, ctx));
  }
  return out;
}

namespace {

Tape::NodeId tape_reverse(Tape& tape, Tape::NodeId v, int dim) {
  if (dim == 1) return v;
  Tape::NodeId out = tape.slice(v, dim - 1, 1);
  for (int i = dim - 2; i >= 0; --i) out = tape.concat(out, tape.slice(v, i, 1));
  return out;
}

Tape::NodeId tape_clamp_log_scale(Tape& tape, Tape::NodeId raw) {
  return tape.mul_scalar(tape.tanh(tape.mul_scalar(raw, 0.5)), 2.0);
}

}  // namespace

Tape::NodeId tape_log_density(Tape& tape, CouplingFlow& f,
                              const std::vector<double>& theta, Tape::NodeId ctx,
                              bool trainable) {
  if (static_cast<int>(theta.size()) != f.dim)
    throw ndiff::ShapeError("tape_log_density: dimension mismatch");
  Tape::NodeId cur = tape.constant(Tensor::vec(theta));
  Tape::NodeId ld = tape.constant(Tensor::scalar(0.0));
  for (size_t l = 0; l < f.blocks.size(); ++l) {
    if (l > 0) cur = tape_reverse(tape, cur, f.dim);
    CouplingBlock& b = f.blocks[l];
    Tape::NodeId in;
    if (b.d_pass == 0 && f.ctx_width == 0) {
      in = tape.constant(Tensor::vec({1.0}));
    } else if (b.d_pass == 0) {
      in = ctx;
    } else if (f.ctx_width == 0) {
      in = tape.slice(cur, 0, b.d_pass);
    } else {
      in = tape.concat(tape.slice(cur, 0, b.d_pass), ctx);
    }
    Tape::NodeId s = tape_clamp_log_scale(tape, nets::mlp_tape(tape, b.scale_net, in, trainable));
    Tape::NodeId t = nets::mlp_tape(tape, b.shift_net, in, trainable);
    Tape::NodeId act = tape.slice(cur, b.d_pass, b.dim - b.d_pass);
    Tape::NodeId act2 = tape.add(tape.mul(act, tape.exp(s)), t);
    cur = (b.d_pass == 0) ? act2 : tape.concat(tape.slice(cur, 0, b.d_pass), act2);
    ld = tape.add(ld, tape.sum(s));
  }
  Tape::NodeId q = tape.mul_scalar(tape.sum(tape.mul(cur, cur)), -0.5);
  return tape.add_scalar(tape.add(q, ld),
                         -0.5 * static_cast<double>(f.dim) * stats::kLog2Pi);
}

ParamSet Maf::params(const std::string& prefix) {
  ParamSet ps;
  for (size_t l = 0; l < layers.size(); ++l) {
    for (size_t k = 0; k < layers[l].dense.size(); ++k) {
      std::string base = prefix + ".layer" + std::to_string(l) + ".fc" + std::to_string(k);
      ps.push_back({base + ".W", &layers[l].dense[k].W});
      ps.push_back({base + ".b", &layers[l].dense[k].b});
    }
  }
  return ps;
}

namespace {

// MADE-style degrees: theta input i has degree i+1, context inputs degree 0,
// hidden units cycle 0..dim-1, outputs (s_t, m_t) have degree t+1 and connect
// strictly downward.
MafLayer make_maf_layer(int dim, int ctx_width, const std::vector<int>& hidden,
                        Rng& rng) {
  MafLayer layer;
  layer.dim = dim;
  int in_w = dim + ctx_width;
  std::vector<int> in_deg(static_cast<size_t>(in_w), 0);
  for (int i = 0; i < dim; ++i) in_deg[static_cast<size_t>(i)] = i + 1;

  std::vector<int> widths;
  widths.push_back(in_w);
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(2 * dim);

  std::vector<int> prev_deg = in_deg;
  for (size_t l = 0; l + 1 < widths.size(); ++l) {
    int out_w = widths[l + 1];
    Dense d;
    d.W = Tensor({out_w, widths[l]});
    d.b = Tensor({out_w});
    bool is_last = (l + 2 == widths.size());
    d.act = is_last ? nets::Act::kIdentity : nets::Act::kRelu;
    nets::init_dense(d, rng);
    std::vector<int> deg(static_cast<size_t>(out_w));
    Tensor mask({out_w, widths[l]});
    if (!is_last) {
      for (int u = 0; u < out_w; ++u) deg[static_cast<size_t>(u)] = u % dim;
      for (int u = 0; u < out_w; ++u)
        for (int i = 0; i < widths[l]; ++i)
          mask.values[static_cast<size_t>(u) * widths[l] + i] =
              (deg[static_cast<size_t>(u)] >= prev_deg[static_cast<size_t>(i)]) ? 1.0 : 0.0;
    } else {
      // outputs: s_1..s_d then m_1..m_d
      for (int u = 0; u < out_w; ++u) deg[static_cast<size_t>(u)] = (u % dim) + 1;
      for (int u = 0; u < out_w; ++u)
        for (int i = 0; i < widths[l]; ++i)
          mask.values[static_cast<size_t>(u) * widths[l] + i] =
              (deg[static_cast<size_t>(u)] > prev_deg[static_cast<size_t>(i)]) ? 1.0 : 0.0;
      std::fill(d.W.values.begin(), d.W.values.end(), 0.0);
      std::fill(d.b.values.begin(), d.b.values.end(), 0.0);
    }
    layer.dense.push_back(std::move(d));
    layer.masks.push_back(std::move(mask));
    prev_deg = deg;
  }
  return layer;
}

// (s, m) for all coordinates from the masked conditioner.
void maf_conditioner(const MafLayer& layer, std::span<const double> theta,
                     std::span<const double> ctx, std::vector<double>& s,
                     std::vector<double>& m) {
  std::vector<double> h;
  h.reserve(theta.size() + ctx.size());
  h.insert(h.end(), theta.begin(), theta.end());
  h.insert(h.end(), ctx.begin(), ctx.end());
  std::vector<double> y;
  for (size_t l = 0; l < layer.dense.size(); ++l) {
    const Dense& d = layer.dense[l];
    const Tensor& mask = layer.masks[l];
    int out = static_cast<int>(d.W.shape[0]);
    int in = static_cast<int>(d.W.shape[1]);
    y.assign(static_cast<size_t>(out), 0.0);
    for (int i = 0; i < out; ++i) {
      const double* __restrict w = d.W.values.data() + static_cast<size_t>(i) * in;
      const double* __restrict mk = mask.values.data() + static_cast<size_t>(i) * in;
      double acc = d.b.values[static_cast<size_t>(i)];
      for (int p = 0; p < in; ++p) acc += w[p] * mk[p] * h[static_cast<size_t>(p)];
      y[static_cast<size_t>(i)] = acc;
    }
    if (d.act == nets::Act::kRelu)
      for (double& v : y) v = v > 0.0 ? v : 0.0;
    h.swap(y);
  }
  int dim = layer.dim;
  s.assign(h.begin(), h.begin() + dim);
  m.assign(h.begin() + dim, h.begin() + 2 * dim);
}

}  // namespace

Maf make_maf(int dim, int ctx_width, int n_layers, Rng& rng,
             const std::vector<int>& hidden) {
  if (dim < 1) throw std::invalid_argument("make_maf: dim must be >= 1");
  Maf f;
  f.dim = dim;
  f.ctx_width = ctx_width;
  for (int l = 0; l < n_layers; ++l)
    f.layers.push_back(make_maf_layer(dim, ctx_width, hidden, rng));
  return f;
}

std::vector<double> flow_forward(const Maf& f, std::span<const double> theta,
                                 std::span<const double> ctx, double* log_det) {
  if (static_cast<int>(theta.size()) != f.dim)
    throw ndiff::ShapeError("flow_forward: dimension mismatch");
  std::vector<double> cur(theta.begin(), theta.end());
  std::vector<double> s, m;
  double ld = 0.0;
  for (size_t l = 0; l < f.layers.size(); ++l) {
    if (l > 0) std::reverse(cur.begin(), cur.end());
    maf_conditioner(f.layers[l], cur, ctx, s, m);
    for (int t = 0; t < f.dim; ++t) {
      double sc = clamp_log_scale(s[static_cast<size_t>(t)]);
      cur[static_cast<size_t>(t)] =
          cur[static_cast<size_t>(t)] * std::exp(sc) + m[static_cast<size_t>(t)];
      ld += sc;
    }
  }
  if (log_det) *log_det = ld;
  return cur;
}

std::vector<double> flow_inverse(const Maf& f, std::span<const double> z,
                                 std::span<const double> ctx) {
  if (static_cast<int>(z.size()) != f.dim)
    throw ndiff::ShapeError("flow_inverse: dimension mismatch");
  std::vector<double> cur(z.begin(), z.end());
  std::vector<double> s, m;
  for (size_t li = f.layers.size(); li-- > 0;) {
    const MafLayer& layer = f.layers[li];
    // z_t depends on theta_{<t}: recover coordinates in order.
    std::vector<double> theta(static_cast<size_t>(f.dim), 0.0);
    for (int t = 0; t < f.dim; ++t) {
      maf_conditioner(layer, theta, ctx, s, m);
      double sc = clamp_log_scale(s[static_cast<size_t>(t)]);
      theta[static_cast<size_t>(t)] =
          (cur[static_cast<size_t>(t)] - m[static_cast<size_t>(t)]) * std::exp(-sc);
    }
    cur = theta;
    if (li > 0) std::reverse(cur.begin(), cur.end());
  }
  return cur;
}

double log_density(const Maf& f, std::span<const double> theta,
                   std::span<const double> ctx) {
  double ld = 0.0;
  std::vector<double> z = flow_forward(f, theta, ctx, &ld);
  double q = 0.0;
  for (double v : z) q += v * v;
  return -0.5 * static_cast<double>(f.dim) * stats::kLog2Pi - 0.5 * q + ld;
}

std::vector<std::vector<double>> sample(const Maf& f, std::span<const double> ctx,
                                        int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<size_t>(n));
  std::vector<double> z(static_cast<size_t>(f.dim));
  for (int i = 0; i < n; ++i) {
    for (double& v : z) v = rng.normal();
    out.push_back(flow_inverse(f, z, ctx));
  }
  return out;
}

}  // namespace nabi::flows
