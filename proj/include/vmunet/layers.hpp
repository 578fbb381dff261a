#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vmunet/ops.hpp"
#include "vmunet/random.hpp"
#include "vmunet/tensor.hpp"

namespace vmunet {

/// Named learnable tensors in registration order.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

inline std::size_t count_scalars(const ParamList& params) {
  std::size_t total = 0;
  for (const auto& [name, t] : params) total += t.numel();
  return total;
}

inline Tensor uniform_param(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (double& e : v) e = uniform(rng, -bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

/// Normal(0, std) redrawn outside +-2 std.
inline Tensor trunc_normal_param(Shape shape, double std_dev, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (double& e : v) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    e = std_dev * z;
  }
  return Tensor(std::move(shape), std::move(v), true);
}

inline constexpr double kLinearInitStd = 0.02;

struct Linear {
  Tensor weight;               // [in, out]
  std::optional<Tensor> bias;  // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
    weight = trunc_normal_param({in, out}, kLinearInitStd, rng);
    if (with_bias) bias = Tensor::zeros({out}, true);
  }

  Tensor operator()(const Tensor& x) const { return bias ? linear(x, weight, *bias) : linear(x, weight); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias) out.emplace_back(prefix + ".bias", *bias);
  }
  static std::size_t param_count(std::size_t in, std::size_t out, bool with_bias) { return in * out + (with_bias ? out : 0); }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim) : gamma(Tensor::ones({dim}, true)), beta(Tensor::zeros({dim}, true)) {}

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
  static std::size_t param_count(std::size_t dim) { return 2 * dim; }
};

struct DepthwiseConv {
  Tensor kernel;  // [k, k, C]
  Tensor bias;    // [C]

  DepthwiseConv() = default;
  DepthwiseConv(std::size_t channels, std::size_t k, Rng& rng) {
    const double bound = 1.0 / static_cast<double>(k);
    kernel = uniform_param({k, k, channels}, bound, rng);
    bias = uniform_param({channels}, bound, rng);
  }

  Tensor operator()(const Tensor& x) const { return depthwise_conv2d(x, kernel, bias); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".kernel", kernel);
    out.emplace_back(prefix + ".bias", bias);
  }
  static std::size_t param_count(std::size_t channels, std::size_t k) { return k * k * channels + channels; }
};

}  // namespace vmunet
