#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "vmunet/error.hpp"
#include "vmunet/layers.hpp"
#include "vmunet/tensor.hpp"

namespace vmunet {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

struct OptimizerState {
  AdamWHyper hyper;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;   // one per parameter, same length
  std::vector<std::vector<double>> second_moment;

  /// Zero moments shaped like `params`.
  static OptimizerState for_params(const ParamList& params, AdamWHyper hyper = {}) {
    OptimizerState s;
    s.hyper = hyper;
    for (const auto& [name, t] : params) {
      s.first_moment.emplace_back(t.numel(), 0.0);
      s.second_moment.emplace_back(t.numel(), 0.0);
    }
    return s;
  }
};

/// One AdamW update: decoupled decay p -= lr * wd * p, then the bias-corrected Adam step.
/// Uses each parameter's accumulated gradient scaled by `grad_scale` (e.g. 1 / batch size).
inline void adamw_step(ParamList& params, OptimizerState& state, double lr, double grad_scale = 1.0) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adamw_step: optimizer state tracks " + std::to_string(state.first_moment.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  const AdamWHyper& h = state.hyper;
  ++state.step;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].second;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != p.numel() || v.size() != p.numel()) {
      throw ShapeError("adamw_step: moment shape mismatch for " + params[i].first);
    }
    auto data = p.mutable_data();
    const auto grad = p.grad();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad[j] * grad_scale;
      data[j] -= lr * h.weight_decay * data[j];
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g;
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      data[j] -= lr * m_hat / (std::sqrt(v_hat) + h.eps);
    }
  }
}

inline void zero_grads(ParamList& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

struct Schedule {
  double eta_max = 1e-3;
  double eta_min = 1e-5;
  std::size_t t_max = 50;

  void validate() const {
    if (!(eta_min <= eta_max)) throw ConfigError("lr_min must not exceed lr");
    if (t_max < 1) throw ConfigError("t_max must be >= 1");
  }
};

/// Cosine annealing from eta_max at t = 0 to eta_min at t = t_max, held at eta_min afterwards.
inline double cosine_lr(std::size_t t, const Schedule& s) {
  if (t == 0) return s.eta_max;
  if (t >= s.t_max) return s.eta_min;
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(s.t_max);
  return s.eta_min + 0.5 * (s.eta_max - s.eta_min) * (1.0 + std::cos(phase));
}

}  // namespace vmunet
