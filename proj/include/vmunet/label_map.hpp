#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vmunet/error.hpp"
#include "vmunet/tensor.hpp"

namespace vmunet {

/// Per-pixel class ids of an H x W grid, row-major.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}
  LabelMap(std::size_t h, std::size_t w, std::vector<std::uint8_t> values) : height(h), width(w), labels(std::move(values)) {
    if (labels.size() != h * w) throw ShapeError("LabelMap: " + std::to_string(labels.size()) + " labels for " + std::to_string(h) + "x" + std::to_string(w));
  }

  std::uint8_t operator()(std::size_t r, std::size_t c) const { return labels[r * width + c]; }
  std::uint8_t& operator()(std::size_t r, std::size_t c) { return labels[r * width + c]; }
  std::size_t size() const noexcept { return labels.size(); }
  bool operator==(const LabelMap&) const = default;
};

inline void require_same_extent(const LabelMap& a, const LabelMap& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

/// Indicator of one class as a [H, W, 1] float tensor.
inline Tensor class_indicator(const LabelMap& map, std::uint8_t cls) {
  std::vector<double> v(map.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = map.labels[i] == cls ? 1.0 : 0.0;
  return Tensor({map.height, map.width, 1}, std::move(v));
}

/// Binary prediction from single-channel logits: foreground iff sigmoid(logit) > 0.5, so a tie maps to 0.
inline LabelMap threshold_logits(const Tensor& logits) {
  if (logits.rank() != 3 || logits.dim(2) != 1) throw ShapeError("threshold_logits: expected [H, W, 1], got " + to_string(logits.shape()));
  LabelMap out(logits.dim(0), logits.dim(1));
  for (std::size_t i = 0; i < out.size(); ++i) out.labels[i] = logits[i] > 0.0 ? 1 : 0;
  return out;
}

/// Per-pixel argmax over [H, W, K] logits (lowest index wins ties).
inline LabelMap argmax_logits(const Tensor& logits) {
  if (logits.rank() != 3 || logits.dim(2) < 2 || logits.dim(2) > 256) {
    throw ShapeError("argmax_logits: expected [H, W, K] with 2 <= K <= 256, got " + to_string(logits.shape()));
  }
  const std::size_t K = logits.dim(2);
  LabelMap out(logits.dim(0), logits.dim(1));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (logits[i * K + k] > logits[i * K + best]) best = k;
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

/// Class map predicted by a network with `num_classes` logit channels (1 = binary).
inline LabelMap predict_labels(const Tensor& logits) {
  return logits.dim(2) == 1 ? threshold_logits(logits) : argmax_logits(logits);
}

}  // namespace vmunet
