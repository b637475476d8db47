#pragma once

#include <span>
#include <string>
#include <vector>

#include "nabi/adam.hpp"
#include "nabi/rng.hpp"
#include "nabi/tape.hpp"
#include "nabi/tensor.hpp"

namespace nabi::nets {

using ndiff::ParamSet;
using ndiff::Tape;
using ndiff::Tensor;

enum class Act { kIdentity, kRelu, kSigmoid, kTanh, kSoftplus };

const char* act_name(Act a);
Act act_from_name(const std::string& s);

struct Dense {
  Tensor W;  // (out, in)
  Tensor b;  // (out)
  Act act = Act::kIdentity;
};

// Fully-connected stack: h_l = act_l(W_l h_{l-1} + b_l).
struct Mlp {
  std::vector<Dense> layers;

  int in_width() const { return layers.empty() ? 0 : static_cast<int>(layers.front().W.shape[1]); }
  int out_width() const { return layers.empty() ? 0 : static_cast<int>(layers.back().W.shape[0]); }
  ParamSet params(const std::string& prefix);
};

// widths = {in, h1, ..., out}; hidden layers use `hidden`, last layer `last`.
Mlp make_mlp(const std::vector<int>& widths, Act hidden, Act last, Rng& rng);

std::vector<double> mlp_forward(const Mlp& net, std::span<const double> x);
Tape::NodeId mlp_tape(Tape& tape, Mlp& net, Tape::NodeId x, bool trainable = true);

struct ConvLayer {
  Tensor W;  // (out_c, in_c, kh, kw)
  Tensor b;  // (out_c)
  int stride = 1;
  int pad = 0;
  Act act = Act::kIdentity;
};

// Conv stack (cross-correlations), flatten, then a head MLP.
struct Cnn {
  int in_c = 1, in_h = 0, in_w = 0;
  std::vector<ConvLayer> convs;
  Mlp head;

  int out_width() const { return head.out_width(); }
  ParamSet params(const std::string& prefix);
};

struct CnnSpec {
  int in_c = 1, in_h = 16, in_w = 16;
  struct Conv {
    int out_c, kh, kw, stride, pad;
  };
  // Reference layout: two 3x3 stride-2 pad-1 conv layers (1->32->64, ReLU)
  // followed by fully-connected 128 -> out.
  std::vector<Conv> convs = {{32, 3, 3, 2, 1}, {64, 3, 3, 2, 1}};
  int fc_width = 128;
  int out = 1;
};

Cnn make_cnn(const CnnSpec& spec, Rng& rng);

// Feature-map shape after the conv stack.
std::vector<int64_t> cnn_feature_shape(const Cnn& net);
// Convolution stack only (per-layer bias + activation), no flatten/head.
Tensor cnn_features(const Cnn& net, const Tensor& image);
std::vector<double> cnn_forward(const Cnn& net, const Tensor& image);
Tape::NodeId cnn_tape(Tape& tape, Cnn& net, Tape::NodeId image, bool trainable = true);

// Permutation-invariant set network: phi(mean_i psi(X_i)).
struct DeepSets {
  Mlp psi;
  Mlp phi;
  ParamSet params(const std::string& prefix);
};

std::vector<double> deepsets_forward(const DeepSets& net,
                                     const std::vector<Tensor>& replicates);
Tape::NodeId deepsets_tape(Tape& tape, DeepSets& net,
                           const std::vector<Tape::NodeId>& replicates,
                           bool trainable = true);

// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.
void init_dense(Dense& d, Rng& rng);
void init_conv(ConvLayer& c, Rng& rng);

}  // namespace nabi::nets
