#include "nabi/nets.hpp"

#include <cmath>
#include <stdexcept>

#include "nabi/linalg.hpp"

namespace nabi::nets {

const char* act_name(Act a) {
  switch (a) {
    case Act::kIdentity: return "identity";
    case Act::kRelu: return "relu";
    case Act::kSigmoid: return "sigmoid";
    case Act::kTanh: return "tanh";
    case Act::kSoftplus: return "softplus";
  }
  return "?";
}

Act act_from_name(const std::string& s) {
  if (s == "identity") return Act::kIdentity;
  if (s == "relu") return Act::kRelu;
  if (s == "sigmoid") return Act::kSigmoid;
  if (s == "tanh") return Act::kTanh;
  if (s == "softplus") return Act::kSoftplus;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

namespace {

void apply_act(Act a, std::vector<double>& v) {
  switch (a) {
    case Act::kIdentity:
      return;
    case Act::kRelu:
      for (double& x : v) x = x > 0.0 ? x : 0.0;
      return;
    case Act::kSigmoid:
      for (double& x : v)
        x = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      return;
    case Act::kTanh:
      for (double& x : v) x = std::tanh(x);
      return;
    case Act::kSoftplus:
      for (double& x : v) x = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
      return;
  }
}

Tape::NodeId act_tape(Tape& tape, Act a, Tape::NodeId x) {
  switch (a) {
    case Act::kIdentity: return x;
    case Act::kRelu: return tape.relu(x);
    case Act::kSigmoid: return tape.sigmoid(x);
    case Act::kTanh: return tape.tanh(x);
    case Act::kSoftplus: return tape.softplus(x);
  }
  return x;
}

}  // namespace

void init_dense(Dense& d, Rng& rng) {
  int out = static_cast<int>(d.W.shape[0]);
  int in = static_cast<int>(d.W.shape[1]);
  double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& w : d.W.values) w = rng.uniform(-bound, bound);
  std::fill(d.b.values.begin(), d.b.values.end(), 0.0);
}

void init_conv(ConvLayer& c, Rng& rng) {
  int out_c = static_cast<int>(c.W.shape[0]);
  int in_c = static_cast<int>(c.W.shape[1]);
  int k = static_cast<int>(c.W.shape[2] * c.W.shape[3]);
  double bound = std::sqrt(6.0 / static_cast<double>(in_c * k + out_c * k));
  for (double& w : c.W.values) w = rng.uniform(-bound, bound);
  std::fill(c.b.values.begin(), c.b.values.end(), 0.0);
}

ParamSet Mlp::params(const std::string& prefix) {
  ParamSet ps;
  for (size_t l = 0; l < layers.size(); ++l) {
    ps.push_back({prefix + ".fc" + std::to_string(l) + ".W", &layers[l].W});
    ps.push_back({prefix + ".fc" + std::to_string(l) + ".b", &layers[l].b});
  }
  return ps;
}

Mlp make_mlp(const std::vector<int>& widths, Act hidden, Act last, Rng& rng) {
  if (widths.size() < 2) throw std::invalid_argument("make_mlp: need at least 2 widths");
  Mlp net;
  for (size_t l = 0; l + 1 < widths.size(); ++l) {
    Dense d;
    d.W = Tensor({widths[l + 1], widths[l]});
    d.b = Tensor({widths[l + 1]});
    d.act = (l + 2 == widths.size()) ? last : hidden;
    init_dense(d, rng);
    net.layers.push_back(std::move(d));
  }
  return net;
}

std::vector<double> mlp_forward(const Mlp& net, std::span<const double> x) {
  if (net.layers.empty()) throw std::invalid_argument("mlp_forward: empty net");
  if (static_cast<int>(x.size()) != net.in_width())
    throw ndiff::ShapeError("mlp_forward: input width " + std::to_string(x.size()) +
                            " != " + std::to_string(net.in_width()));
  std::vector<double> h(x.begin(), x.end());
  std::vector<double> y;
  for (const Dense& d : net.layers) {
    int out = static_cast<int>(d.W.shape[0]);
    int in = static_cast<int>(d.W.shape[1]);
    y.assign(static_cast<size_t>(out), 0.0);
    for (int i = 0; i < out; ++i) {
      const double* __restrict row = d.W.values.data() + static_cast<size_t>(i) * in;
      double s = d.b.values[static_cast<size_t>(i)];
      for (int p = 0; p < in; ++p) s += row[p] * h[static_cast<size_t>(p)];
      y[static_cast<size_t>(i)] = s;
    }
    apply_act(d.act, y);
    h.swap(y);
  }
  return h;
}

Tape::NodeId mlp_tape(Tape& tape, Mlp& net, Tape::NodeId x, bool trainable) {
  Tape::NodeId h = x;
  for (Dense& d : net.layers) {
    Tape::NodeId w = trainable ? tape.param(&d.W) : tape.input(&d.W);
    Tape::NodeId b = trainable ? tape.param(&d.b) : tape.input(&d.b);
    h = tape.add(tape.matmul(w, h), b);
    h = act_tape(tape, d.act, h);
  }
  return h;
}

ParamSet Cnn::params(const std::string& prefix) {
  ParamSet ps;
  for (size_t l = 0; l < convs.size(); ++l) {
    ps.push_back({prefix + ".conv" + std::to_string(l) + ".W", &convs[l].W});
    ps.push_back({prefix + ".conv" + std::to_string(l) + ".b", &convs[l].b});
  }
  auto head_ps = head.params(prefix + ".head");
  ps.insert(ps.end(), head_ps.begin(), head_ps.end());
  return ps;
}

Cnn make_cnn(const CnnSpec& spec, Rng& rng) {
  Cnn net;
  net.in_c = spec.in_c;
  net.in_h = spec.in_h;
  net.in_w = spec.in_w;
  int c = spec.in_c, h = spec.in_h, w = spec.in_w;
  for (const auto& cs : spec.convs) {
    ConvLayer layer;
    layer.W = Tensor({cs.out_c, c, cs.kh, cs.kw});
    layer.b = Tensor({cs.out_c});
    layer.stride = cs.stride;
    layer.pad = cs.pad;
    layer.act = Act::kRelu;
    init_conv(layer, rng);
    net.convs.push_back(std::move(layer));
    h = (h + 2 * cs.pad - cs.kh) / cs.stride + 1;
    w = (w + 2 * cs.pad - cs.kw) / cs.stride + 1;
    c = cs.out_c;
    if (h < 1 || w < 1) throw std::invalid_argument("make_cnn: feature map vanished");
  }
  net.head = make_mlp({c * h * w, spec.fc_width, spec.out}, Act::kRelu, Act::kIdentity, rng);
  return net;
}

std::vector<int64_t> cnn_feature_shape(const Cnn& net) {
  int c = net.in_c, h = net.in_h, w = net.in_w;
  for (const auto& layer : net.convs) {
    int kh = static_cast<int>(layer.W.shape[2]);
    int kw = static_cast<int>(layer.W.shape[3]);
    h = (h + 2 * layer.pad - kh) / layer.stride + 1;
    w = (w + 2 * layer.pad - kw) / layer.stride + 1;
    c = static_cast<int>(layer.W.shape[0]);
  }
  return {c, h, w};
}

Tensor cnn_features(const Cnn& net, const Tensor& image) {
  if (image.rank() != 3 || image.shape[0] != net.in_c || image.shape[1] != net.in_h ||
      image.shape[2] != net.in_w)
    throw ndiff::ShapeError("cnn_features: image shape " + ndiff::shape_str(image.shape) +
                            " does not match net input");
  Tensor cur = image;
  for (const auto& layer : net.convs) {
    int ci = static_cast<int>(cur.shape[0]);
    int h = static_cast<int>(cur.shape[1]);
    int w = static_cast<int>(cur.shape[2]);
    int co = static_cast<int>(layer.W.shape[0]);
    int kh = static_cast<int>(layer.W.shape[2]);
    int kw = static_cast<int>(layer.W.shape[3]);
    int oh = (h + 2 * layer.pad - kh) / layer.stride + 1;
    int ow = (w + 2 * layer.pad - kw) / layer.stride + 1;
    Tensor next({co, oh, ow});
    for (int c = 0; c < co; ++c) {
      const double* __restrict ker =
          layer.W.values.data() + static_cast<size_t>(c) * ci * kh * kw;
      double bias = layer.b.values[static_cast<size_t>(c)];
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double s = bias;
          int iy0 = oy * layer.stride - layer.pad;
          int ix0 = ox * layer.stride - layer.pad;
          const double* k = ker;
          for (int cc = 0; cc < ci; ++cc) {
            const double* __restrict plane =
                cur.values.data() + static_cast<size_t>(cc) * h * w;
            for (int ky = 0; ky < kh; ++ky) {
              int iy = iy0 + ky;
              for (int kx = 0; kx < kw; ++kx) {
                int ix = ix0 + kx;
                double xv = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                ? plane[static_cast<size_t>(iy) * w + ix]
                                : 0.0;
                s += xv * (*k++);
              }
            }
          }
          next.values[(static_cast<size_t>(c) * oh + oy) * ow + ox] = s;
        }
      }
    }
    apply_act(layer.act, next.values);
    cur = std::move(next);
  }
  return cur;
}

std::vector<double> cnn_forward(const Cnn& net, const Tensor& image) {
  Tensor feat = cnn_features(net, image);
  return mlp_forward(net.head, feat.values);
}

Tape::NodeId cnn_tape(Tape& tape, Cnn& net, Tape::NodeId image, bool trainable) {
  Tape::NodeId h = image;
  for (ConvLayer& layer : net.convs) {
    Tape::NodeId w = trainable ? tape.param(&layer.W) : tape.input(&layer.W);
    Tape::NodeId b = trainable ? tape.param(&layer.b) : tape.input(&layer.b);
    h = tape.conv2d(h, w, b, layer.stride, layer.pad);
    h = act_tape(tape, layer.act, h);
  }
  h = tape.reshape(h, {tape.val(h).numel()});
  return mlp_tape(tape, net.head, h, trainable);
}

ParamSet DeepSets::params(const std::string& prefix) {
  ParamSet ps = psi.params(prefix + ".psi");
  auto phi_ps = phi.params(prefix + ".phi");
  ps.insert(ps.end(), phi_ps.begin(), phi_ps.end());
  return ps;
}

std::vector<double> deepsets_forward(const DeepSets& net,
                                     const std::vector<Tensor>& replicates) {
  if (replicates.empty())
    throw std::invalid_argument("deepsets_forward: empty replicate list");
  for (const Tensor& r : replicates)
    if (!same_shape(r, replicates.front()))
      throw ndiff::ShapeError("deepsets_forward: replicate shape mismatch");
  std::vector<double> agg(static_cast<size_t>(net.psi.out_width()), 0.0);
  for (const Tensor& r : replicates) {
    std::vector<double> e = mlp_forward(net.psi, r.values);
    for (size_t i = 0; i < agg.size(); ++i) agg[i] += e[i];
  }
  double inv = 1.0 / static_cast<double>(replicates.size());
  for (double& v : agg) v *= inv;
  return mlp_forward(net.phi, agg);
}

Tape::NodeId deepsets_tape(Tape& tape, DeepSets& net,
                           const std::vector<Tape::NodeId>& replicates,
                           bool trainable) {
  if (replicates.empty())
    throw std::invalid_argument("deepsets_tape: empty replicate list");
  Tape::NodeId agg = -1;
  for (Tape::NodeId r : replicates) {
    Tape::NodeId flat = tape.reshape(r, {tape.val(r).numel()});
    Tape::NodeId e = mlp_tape(tape, net.psi, flat, trainable);
    agg = (agg < 0) ? e : tape.add(agg, e);
  }
  agg = tape.mul_scalar(agg, 1.0 / static_cast<double>(replicates.size()));
  return mlp_tape(tape, net.phi, agg, trainable);
}

}  // namespace nabi::nets
