#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "nabi/tensor.hpp"

namespace nabi::ndiff {

// Named handle on a parameter tensor owned by a network struct.
struct ParamRef {
  std::string name;
  Tensor* t;
};
using ParamSet = std::vector<ParamRef>;

inline int64_t param_count(const ParamSet& ps) {
  int64_t n = 0;
  for (const auto& p : ps) n += p.t->numel();
  return n;
}

inline void zero_grads(ParamSet& ps) {
  for (auto& p : ps) {
    p.t->ensure_grad();
    p.t->zero_grad();
  }
}

// Adaptive-moment optimiser over a fixed parameter set.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(ParamSet params) : Adam(std::move(params), Options()) {}
  Adam(ParamSet params, Options opt) : params_(std::move(params)), opt_(opt) {
    if (!(opt_.lr > 0.0)) throw std::invalid_argument("Adam: learning rate must be > 0");
    int64_t n = param_count(params_);
    m_.assign(static_cast<size_t>(n), 0.0);
    v_.assign(static_cast<size_t>(n), 0.0);
  }

  // Applies one update from the gradients stored on the parameter tensors.
  // A non-finite gradient aborts the step before any parameter is touched.
  void step() {
    size_t off = 0;
    for (const auto& p : params_) {
      if (!p.t->grad)
        throw std::runtime_error("Adam: missing gradient for '" + p.name + "'");
      for (double g : *p.t->grad)
        if (!std::isfinite(g))
          throw NonFiniteGradient("non-finite gradient in '" + p.name + "'");
      off += p.t->grad->size();
    }
    ++t_;
    double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    off = 0;
    for (auto& p : params_) {
      const std::vector<double>& g = *p.t->grad;
      for (size_t i = 0; i < g.size(); ++i) {
        double& m = m_[off + i];
        double& v = v_[off + i];
        m = opt_.beta1 * m + (1.0 - opt_.beta1) * g[i];
        v = opt_.beta2 * v + (1.0 - opt_.beta2) * g[i] * g[i];
        double mhat = m / bc1;
        double vhat = v / bc2;
        p.t->values[i] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
      }
      off += g.size();
    }
  }

  struct NonFiniteGradient : std::runtime_error {
    using std::runtime_error::runtime_error;
  };

  void set_lr(double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("Adam: learning rate must be > 0");
    opt_.lr = lr;
  }
  double lr() const { return opt_.lr; }
  int64_t steps() const { return t_; }
  const ParamSet& params() const { return params_; }

 private:
  ParamSet params_;
  Options opt_;
  std::vector<double> m_, v_;
  int64_t t_ = 0;
};

}  // namespace nabi::ndiff
