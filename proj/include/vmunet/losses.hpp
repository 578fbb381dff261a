#pragma once

// Segmentation losses on logits. Binary tasks use BCE + soft Dice, multi-class
// tasks use cross-entropy + soft Dice averaged over every class (background included).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vmunet/error.hpp"
#include "vmunet/label_map.hpp"
#include "vmunet/ops.hpp"
#include "vmunet/tensor.hpp"

namespace vmunet {

struct LossWeights {
  double bce = 1.0;        // lambda_1
  double bce_dice = 1.0;   // lambda_2
  double ce = 1.0;         // lambda_3
  double ce_dice = 1.0;    // lambda_4

  bool operator==(const LossWeights&) const = default;
};

inline constexpr double kProbabilityClamp = 1e-7;
inline constexpr double kDiceSmooth = 1.0;

/// Mean binary cross-entropy of sigmoid(logits) against a {0,1} target of the same shape.
/// Probabilities are clamped to [eps, 1 - eps]; the clamped region passes no gradient.
inline Tensor bce_loss(const Tensor& logits, const Tensor& target, double eps = kProbabilityClamp) {
  detail::require_same_shape(logits, target, "bce_loss");
  const std::size_t n = logits.numel();
  if (n == 0) throw ShapeError("bce_loss: empty input");
  double total = 0.0;
  std::vector<double> local(n);  // dL/dlogit
  for (std::size_t i = 0; i < n; ++i) {
    const double raw = detail::sigmoid_scalar(logits[i]);
    const double p = std::clamp(raw, eps, 1.0 - eps);
    const double y = target[i];
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    local[i] = (raw == p) ? (p - y) / static_cast<double>(n) : 0.0;
  }
  const bool tracked = detail::needs_grad(logits);
  Tensor loss = detail::make_result({}, {total / static_cast<double>(n)}, tracked);
  if (tracked) {
    detail::record([li = logits.impl(), yi = loss.impl(), local = std::move(local)] {
      if (yi->grad.empty() || !li->requires_grad) return;
      auto& g = li->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[0] * local[i];
    });
  }
  return loss;
}

/// 1 - (2 sum(p t) + smooth) / (sum p + sum t + smooth) over soft predictions p in [0,1].
inline Tensor dice_loss(const Tensor& probs, const Tensor& target, double smooth = kDiceSmooth) {
  detail::require_same_shape(probs, target, "dice_loss");
  double inter = 0.0, sum_p = 0.0, sum_t = 0.0;
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    inter += probs[i] * target[i];
    sum_p += probs[i];
    sum_t += target[i];
  }
  const double num = 2.0 * inter + smooth;
  const double den = sum_p + sum_t + smooth;
  if (den == 0.0) throw NumericError("dice_loss: empty prediction and target with zero smoothing");
  const bool tracked = detail::needs_grad(probs);
  Tensor loss = detail::make_result({}, {1.0 - num / den}, tracked);
  if (tracked) {
    detail::record([pi = probs.impl(), ti = target.impl(), yi = loss.impl(), num, den] {
      if (yi->grad.empty() || !pi->requires_grad) return;
      auto& g = pi->ensure_grad();
      const double gy = yi->grad[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= gy * (2.0 * ti->data[i] * den - num) / (den * den);
    });
  }
  return loss;
}

/// Mean over pixels of -log softmax(logits)[true class]; logits [..., K].
inline Tensor ce_loss(const Tensor& logits, const LabelMap& target) {
  if (logits.rank() == 0 || logits.shape().back() < 2) throw ShapeError("ce_loss: need at least 2 classes");
  const std::size_t K = logits.shape().back();
  const std::size_t n = logits.numel() / K;
  if (n != target.size()) throw ShapeError("ce_loss: " + std::to_string(n) + " pixels vs " + std::to_string(target.size()) + " labels");
  double total = 0.0;
  std::vector<double> local(logits.numel());
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t cls = target.labels[r];
    if (cls >= K) throw std::out_of_range("ce_loss: label " + std::to_string(cls) + " outside [0, " + std::to_string(K) + ")");
    double m = logits[r * K];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, logits[r * K + k]);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(logits[r * K + k] - m);
    const double log_z = m + std::log(z);
    total += log_z - logits[r * K + cls];
    for (std::size_t k = 0; k < K; ++k) {
      const double p = std::exp(logits[r * K + k] - log_z);
      local[r * K + k] = (p - (k == cls ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  const bool tracked = detail::needs_grad(logits);
  Tensor loss = detail::make_result({}, {total / static_cast<double>(n)}, tracked);
  if (tracked) {
    detail::record([li = logits.impl(), yi = loss.impl(), local = std::move(local)] {
      if (yi->grad.empty() || !li->requires_grad) return;
      auto& g = li->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[0] * local[i];
    });
  }
  return loss;
}

/// Unweighted mean of per-class soft Dice losses of softmax(logits) over all K classes.
inline Tensor multiclass_dice_loss(const Tensor& logits, const LabelMap& target, double smooth = kDiceSmooth) {
  if (logits.rank() != 3 || logits.dim(2) < 2) throw ShapeError("multiclass_dice_loss: expected [H, W, K], K >= 2");
  const std::size_t K = logits.dim(2);
  Tensor probs = softmax_last(logits);
  Tensor total;
  for (std::size_t k = 0; k < K; ++k) {
    Tensor term = dice_loss(slice_last(probs, k, 1), class_indicator(target, static_cast<std::uint8_t>(k)), smooth);
    total = k == 0 ? term : add(total, term);
  }
  return scale(total, 1.0 / static_cast<double>(K));
}

/// lambda_1 * BCE + lambda_2 * Dice for single-channel logits [H, W, 1] and a {0,1} label map.
inline Tensor bcedice(const Tensor& logits, const LabelMap& target, const LossWeights& w = {}) {
  if (w.bce < 0.0 || w.bce_dice < 0.0) throw std::invalid_argument("bcedice: negative weight");
  const Tensor t = class_indicator(target, 1);
  return add(scale(bce_loss(logits, t), w.bce), scale(dice_loss(sigmoid(logits), t), w.bce_dice));
}

/// lambda_3 * CE + lambda_4 * multi-class Dice for logits [H, W, K].
inline Tensor cedice(const Tensor& logits, const LabelMap& target, const LossWeights& w = {}) {
  if (w.ce < 0.0 || w.ce_dice < 0.0) throw std::invalid_argument("cedice: negative weight");
  return add(scale(ce_loss(logits, target), w.ce), scale(multiclass_dice_loss(logits, target), w.ce_dice));
}

/// The task loss for a network output: BceDice when K == 1, CeDice otherwise.
inline Tensor segmentation_loss(const Tensor& logits, const LabelMap& target, const LossWeights& w = {}) {
  return logits.dim(2) == 1 ? bcedice(logits, target, w) : cedice(logits, target, w);
}

}  // namespace vmunet
