#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "vmunet/error.hpp"
#include "vmunet/label_map.hpp"
#include "vmunet/random.hpp"
#include "vmunet/tensor.hpp"

namespace vmunet {

/// One sampled geometric transform: optional flips, then `quarter_turns` counter-clockwise 90 degree rotations.
struct AugmentDraw {
  bool horizontal_flip = false;
  bool vertical_flip = false;
  unsigned quarter_turns = 0;  // 0..3

  bool is_identity() const noexcept { return !horizontal_flip && !vertical_flip && quarter_turns % 4 == 0; }
};

/// Flips with probability 0.5 each; rotation uniform over {0, 90, 180, 270} degrees.
inline AugmentDraw draw_augment(Rng& rng) {
  AugmentDraw d;
  d.horizontal_flip = uniform01(rng) < 0.5;
  d.vertical_flip = uniform01(rng) < 0.5;
  d.quarter_turns = static_cast<unsigned>(uniform_index(rng, 4));
  return d;
}

namespace detail {

// For each output pixel, the source pixel index; also returns the output extents.
inline std::vector<std::size_t> augment_source(std::size_t H, std::size_t W, const AugmentDraw& d, std::size_t& out_h,
                                               std::size_t& out_w) {
  // Start from identity and compose the steps on (row, col) coordinates of the source.
  std::vector<std::size_t> src(H * W);
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = i;
  std::size_t h = H, w = W;
  if (d.horizontal_flip) {
    std::vector<std::size_t> next(src.size());
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) next[r * w + c] = src[r * w + (w - 1 - c)];
    src.swap(next);
  }
  if (d.vertical_flip) {
    std::vector<std::size_t> next(src.size());
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) next[r * w + c] = src[(h - 1 - r) * w + c];
    src.swap(next);
  }
  for (unsigned t = 0; t < d.quarter_turns % 4; ++t) {
    // Counter-clockwise: out[i][j] = in[j][w - 1 - i], output extents (w, h).
    std::vector<std::size_t> next(src.size());
    for (std::size_t i = 0; i < w; ++i)
      for (std::size_t j = 0; j < h; ++j) next[i * h + j] = src[j * w + (w - 1 - i)];
    src.swap(next);
    std::swap(h, w);
  }
  out_h = h;
  out_w = w;
  return src;
}

}  // namespace detail

/// Applies the same transform to an [H, W, C] image and its label map.
inline std::pair<Tensor, LabelMap> apply_augment(const Tensor& image, const LabelMap& mask, const AugmentDraw& d) {
  if (image.rank() != 3 || image.dim(0) != mask.height || image.dim(1) != mask.width) {
    throw ShapeError("augment: image " + to_string(image.shape()) + " and mask " + std::to_string(mask.height) + "x" +
                     std::to_string(mask.width) + " are not aligned");
  }
  const std::size_t C = image.dim(2);
  std::size_t h = 0, w = 0;
  const auto src = detail::augment_source(mask.height, mask.width, d, h, w);
  std::vector<double> pixels(image.numel());
  LabelMap out_mask(h, w);
  for (std::size_t i = 0; i < src.size(); ++i) {
    for (std::size_t c = 0; c < C; ++c) pixels[i * C + c] = image[src[i] * C + c];
    out_mask.labels[i] = mask.labels[src[i]];
  }
  return {Tensor({h, w, C}, std::move(pixels)), std::move(out_mask)};
}

inline std::pair<Tensor, LabelMap> augment(const Tensor& image, const LabelMap& mask, Rng& rng) {
  return apply_augment(image, mask, draw_augment(rng));
}

}  // namespace vmunet
