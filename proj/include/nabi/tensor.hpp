#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nabi::ndiff {

// Dense row-major tensor of doubles with an optional gradient slot.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> values;
  std::optional<std::vector<double>> grad;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    values.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<int64_t> s, std::vector<double> v)
      : shape(std::move(s)), values(std::move(v)) {
    if (static_cast<int64_t>(values.size()) != numel_of(shape))
      throw std::invalid_argument("Tensor: shape/value size mismatch");
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor vec(std::vector<double> v) {
    auto n = static_cast<int64_t>(v.size());
    return Tensor({n}, std::move(v));
  }

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return shape.empty(); }

  double& at(int64_t i) { return values[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return values[static_cast<size_t>(i)]; }

  void ensure_grad() {
    if (!grad) grad.emplace(values.size(), 0.0);
  }
  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d < 0) throw std::invalid_argument("Tensor: negative extent");
      n *= d;
    }
    return n;
  }
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape;
}

std::string shape_str(const std::vector<int64_t>& s);

}  // namespace nabi::ndiff
