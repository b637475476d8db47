#pragma once

#include <span>
#include <vector>

#include "nabi/nets.hpp"
#include "nabi/rng.hpp"

namespace nabi::flows {

using ndiff::ParamSet;
using ndiff::Tape;
using ndiff::Tensor;
using nets::Mlp;

// Raw conditioner log-scales are bounded to (-2, 2) via 2*tanh(s/2) so that
// exp() stays tame during early training.
double clamp_log_scale(double raw);

// One affine coupling block. The first `d_pass` coordinates pass through and
// drive the conditioners together with the context; the remaining coordinates
// are scaled and shifted. With d = 1 the partition degenerates and the
// conditioners see the context alone.
struct CouplingBlock {
  int dim = 1;
  int d_pass = 0;
  Mlp scale_net;
  Mlp shift_net;
};

struct CouplingFlow {
  int dim = 1;
  int ctx_width = 0;
  std::vector<CouplingBlock> blocks;  // coordinates reversed between blocks

  ParamSet params(const std::string& prefix);
};

// blocks conditioner hidden widths default to {64, 64}; final layers are
// zero-initialised so a fresh flow is the identity map.
CouplingFlow make_coupling_flow(int dim, int ctx_width, int n_blocks, Rng& rng,
                                const std::vector<int>& hidden = {64, 64});

// theta -> base; returns transformed vector, accumulates log|det J|.
std::vector<double> flow_forward(const CouplingFlow& f, std::span<const double> theta,
                                 std::span<const double> ctx, double* log_det);
std::vector<double> flow_inverse(const CouplingFlow& f, std::span<const double> z,
                                 std::span<const double> ctx);
double log_density(const CouplingFlow& f, std::span<const double> theta,
                   std::span<const double> ctx);
std::vector<std::vector<double>> sample(const CouplingFlow& f,
                                        std::span<const double> ctx, int n, Rng& rng);

// Graph version of log_density for training; theta is a constant, the context
// is a tape node (e.g. a summary-network output).
Tape::NodeId tape_log_density(Tape& tape, CouplingFlow& f,
                              const std::vector<double>& theta, Tape::NodeId ctx,
                              bool trainable = true);

// Masked autoregressive flow: output t of each layer depends on coordinates
// 1..t-1 and the context only, enforced with 0-1 masks on a single
// conditioner network per layer.
struct MafLayer {
  int dim = 1;
  // Dense stack; effective weight of layer l is W_l elementwise-multiplied by
  // the fixed binary mask M_l.
  std::vector<nets::Dense> dense;
  std::vector<Tensor> masks;
};

struct Maf {
  int dim = 1;
  int ctx_width = 0;
  std::vector<MafLayer> layers;  // coordinates reversed between layers

  ParamSet params(const std::string& prefix);
};

Maf make_maf(int dim, int ctx_width, int n_layers, Rng& rng,
             const std::vector<int>& hidden = {64, 64});

std::vector<double> flow_forward(const Maf& f, std::span<const double> theta,
                                 std::span<const double> ctx, double* log_det);
std::vector<double> flow_inverse(const Maf& f, std::span<const double> z,
                                 std::span<const double> ctx);
double log_density(const Maf& f, std::span<const double> theta,
                   std::span<const double> ctx);
std::vector<std::vector<double>> sample(const Maf& f, std::span<const double> ctx,
                                        int n, Rng& rng);

}  // namespace nabi::flows
