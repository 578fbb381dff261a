#pragma once

// Synthetic segmentation data: noisy background with filled ellipses and rectangles,
// one flat colour per class, so the mask is exactly the rendered geometry.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vmunet/error.hpp"
#include "vmunet/label_map.hpp"
#include "vmunet/netpbm.hpp"
#include "vmunet/network.hpp"
#include "vmunet/random.hpp"
#include "vmunet/tensor.hpp"

namespace vmunet {

struct SegmentationSample {
  Tensor image;  // [H, W, 3] in [0, 1]
  LabelMap mask;
  std::string id;
};

using Dataset = std::vector<SegmentationSample>;

/// Paints `cls` into every pixel whose centre lies inside the axis-aligned ellipse. Returns the pixel count.
inline std::size_t render_ellipse(LabelMap& mask, double cy, double cx, double semi_y, double semi_x, std::uint8_t cls) {
  std::size_t painted = 0;
  for (std::size_t r = 0; r < mask.height; ++r)
    for (std::size_t c = 0; c < mask.width; ++c) {
      const double dy = (static_cast<double>(r) + 0.5 - cy) / semi_y;
      const double dx = (static_cast<double>(c) + 0.5 - cx) / semi_x;
      if (dy * dy + dx * dx <= 1.0) {
        mask(r, c) = cls;
        ++painted;
      }
    }
  return painted;
}

/// Paints rows [r0, r1) x cols [c0, c1), clipped to the grid.
inline void render_rect(LabelMap& mask, std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1, std::uint8_t cls) {
  for (std::size_t r = r0; r < std::min(r1, mask.height); ++r)
    for (std::size_t c = c0; c < std::min(c1, mask.width); ++c) mask(r, c) = cls;
}

namespace detail {

inline std::array<double, 3> class_colour(std::size_t cls) {
  static constexpr std::array<std::array<double, 3>, 8> palette{{{0.20, 0.22, 0.25},
                                                                  {0.90, 0.75, 0.30},
                                                                  {0.25, 0.70, 0.90},
                                                                  {0.85, 0.30, 0.35},
                                                                  {0.40, 0.85, 0.40},
                                                                  {0.75, 0.45, 0.90},
                                                                  {0.95, 0.95, 0.95},
                                                                  {0.55, 0.35, 0.15}}};
  return palette[cls % palette.size()];
}

inline SegmentationSample synth_sample(std::size_t size, std::size_t num_classes, Rng& rng, std::string id) {
  const std::size_t foreground = num_classes == 1 ? 1 : num_classes - 1;
  const double s = static_cast<double>(size);
  LabelMap mask(size, size);
  // Redraw until every foreground class survives the overlaps of later shapes.
  for (;;) {
    std::fill(mask.labels.begin(), mask.labels.end(), 0);
    for (std::size_t k = 1; k <= foreground; ++k) {
      const std::size_t shapes = 1 + uniform_index(rng, 2);
      for (std::size_t i = 0; i < shapes; ++i) {
        const auto cls = static_cast<std::uint8_t>(k);
        if (uniform01(rng) < 0.5) {
          const double ry = uniform(rng, s / 8, s / 3.5), rx = uniform(rng, s / 8, s / 3.5);
          render_ellipse(mask, uniform(rng, ry / 2, s - ry / 2), uniform(rng, rx / 2, s - rx / 2), ry, rx, cls);
        } else {
          const std::size_t h = size / 4 + uniform_index(rng, size / 3), w = size / 4 + uniform_index(rng, size / 3);
          const std::size_t r0 = uniform_index(rng, size - h / 2), c0 = uniform_index(rng, size - w / 2);
          render_rect(mask, r0, c0, r0 + h, c0 + w, cls);
        }
      }
    }
    std::vector<bool> present(foreground + 1, false);
    for (auto v : mask.labels) present[v] = true;
    if (std::all_of(present.begin() + 1, present.end(), [](bool b) { return b; })) break;
  }
  std::vector<double> pixels(size * size * 3);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const auto colour = class_colour(mask.labels[i]);
    for (std::size_t ch = 0; ch < 3; ++ch) pixels[i * 3 + ch] = std::clamp(colour[ch] + 0.05 * normal(rng), 0.0, 1.0);
  }
  return {Tensor({size, size, 3}, std::move(pixels)), std::move(mask), std::move(id)};
}

}  // namespace detail

/// `n` square samples of side `size` (a multiple of 32). num_classes = 1 means a binary task (labels {0, 1}).
/// Sample i depends only on (seed, i).
inline Dataset synth_dataset(std::size_t n, std::size_t size, std::size_t num_classes, std::uint64_t seed) {
  if (size == 0 || size % kSpatialDivisor != 0) {
    throw ConfigError("synth_dataset: size " + std::to_string(size) + " is not a positive multiple of 32");
  }
  if (num_classes == 0 || num_classes > 255) throw ConfigError("synth_dataset: num_classes must be in [1, 255]");
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = derive_stream(seed, "synth/" + std::to_string(i));
    out.push_back(detail::synth_sample(size, num_classes, rng, "synth_" + std::to_string(i)));
  }
  return out;
}

/// Reads DIR/images/<id>.ppm with DIR/masks/<id>.pgm, sorted by id.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path images = dir / "images", masks = dir / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks)) {
    throw DataError(dir.string() + ": expected images/ and masks/ subdirectories");
  }
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(images))
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw DataError(images.string() + ": no .ppm files");
  Dataset out;
  for (const std::string& id : ids) {
    SegmentationSample s{netpbm::read_image(images / (id + ".ppm")), netpbm::read_mask(masks / (id + ".pgm")), id};
    if (s.image.dim(0) != s.mask.height || s.image.dim(1) != s.mask.width) {
      throw DataError(id + ": image and mask extents differ");
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  for (const auto& s : data) {
    netpbm::write_image(dir / "images" / (s.id + ".ppm"), s.image);
    netpbm::write_mask(dir / "masks" / (s.id + ".pgm"), s.mask);
  }
}

}  // namespace vmunet
