#pragma once

// Evaluation metrics on hard masks.
//
// Binary protocol: "miou" is the foreground IoU TP / (TP + FP + FN), the
// convention of the skin-lesion benchmarks. The two-class mean of foreground
// and background IoU is reported separately as "miou_2class".

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "vmunet/error.hpp"
#include "vmunet/label_map.hpp"

namespace vmunet {

struct ConfusionStats {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
  ConfusionStats& operator+=(const ConfusionStats& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionStats&) const = default;
};

/// Pixel counts for foreground class `positive` (any other label is negative).
inline ConfusionStats confusion(const LabelMap& pred, const LabelMap& gt, std::uint8_t positive = 1) {
  require_same_extent(pred, gt, "confusion");
  ConfusionStats s;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.labels[i] == positive;
    const bool g = gt.labels[i] == positive;
    if (p && g) ++s.tp;
    else if (p) ++s.fp;
    else if (g) ++s.fn;
    else ++s.tn;
  }
  return s;
}

struct BinaryMetrics {
  double miou = 0.0;
  double miou_2class = 0.0;
  double dsc = 0.0;
  double acc = 0.0;
  double sen = 0.0;
  double spe = 0.0;
};

namespace detail {
// num / den, or 1 when the region is empty in both masks (den == 0 and `both_empty`), else 0.
inline double ratio(double num, double den, bool both_empty) {
  if (den > 0.0) return num / den;
  return both_empty ? 1.0 : 0.0;
}
}  // namespace detail

inline BinaryMetrics metrics(const ConfusionStats& s) {
  const double tp = static_cast<double>(s.tp), fp = static_cast<double>(s.fp);
  const double tn = static_cast<double>(s.tn), fn = static_cast<double>(s.fn);
  BinaryMetrics m;
  m.miou = detail::ratio(tp, tp + fp + fn, true);
  m.dsc = detail::ratio(2.0 * tp, 2.0 * tp + fp + fn, true);
  m.acc = detail::ratio(tp + tn, tp + fp + tn + fn, true);
  // Sensitivity is undefined when the ground truth has no foreground: 1 iff the prediction has none either.
  m.sen = detail::ratio(tp, tp + fn, fp == 0.0);
  m.spe = detail::ratio(tn, tn + fp, fn == 0.0);
  const double iou_bg = detail::ratio(tn, tn + fp + fn, true);
  m.miou_2class = 0.5 * (m.miou + iou_bg);
  return m;
}

/// Hard Dice of every class 0..K-1; a class absent from both maps scores 1.
inline std::vector<double> dsc_per_class(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes) {
  require_same_extent(pred, gt, "dsc_per_class");
  std::vector<std::uint64_t> inter(num_classes, 0), count_p(num_classes, 0), count_g(num_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t p = pred.labels[i], g = gt.labels[i];
    if (p >= num_classes || g >= num_classes) throw std::out_of_range("dsc_per_class: label outside [0, K)");
    ++count_p[p];
    ++count_g[g];
    if (p == g) ++inter[p];
  }
  std::vector<double> out(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double den = static_cast<double>(count_p[k] + count_g[k]);
    out[k] = den == 0.0 ? 1.0 : 2.0 * static_cast<double>(inter[k]) / den;
  }
  return out;
}

/// Mean of per-class scores over classes 1..K-1.
inline double mean_foreground(const std::vector<double>& per_class) {
  if (per_class.size() < 2) throw std::invalid_argument("mean_foreground: need at least one foreground class");
  double total = 0.0;
  for (std::size_t k = 1; k < per_class.size(); ++k) total += per_class[k];
  return total / static_cast<double>(per_class.size() - 1);
}

/// Pixels of the mask with at least one 4-neighbour outside the mask (the image border counts as outside).
inline std::vector<std::size_t> boundary_pixels(const std::vector<bool>& mask, std::size_t height, std::size_t width) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      if (!mask[r * width + c]) continue;
      const bool edge = r == 0 || c == 0 || r + 1 == height || c + 1 == width || !mask[(r - 1) * width + c] ||
                        !mask[(r + 1) * width + c] || !mask[r * width + c - 1] || !mask[r * width + c + 1];
      if (edge) out.push_back(r * width + c);
    }
  return out;
}

/// Linear-interpolated percentile (q in [0, 1]) of an unsorted sample.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace detail {

// Squared Euclidean distance from every `query` pixel to the nearest `target` pixel, exact in integers:
// per-row horizontal distances, then a minimum over rows.
inline std::vector<double> nearest_squared_distances(const std::vector<std::size_t>& query, const std::vector<std::size_t>& target,
                                                     std::size_t height, std::size_t width) {
  constexpr std::int64_t kNone = std::numeric_limits<std::int64_t>::max() / 4;
  std::vector<std::int64_t> row_dist(height * width, kNone);
  std::vector<bool> is_target(height * width, false);
  for (std::size_t p : target) is_target[p] = true;
  for (std::size_t r = 0; r < height; ++r) {
    std::int64_t last = kNone;
    for (std::size_t c = 0; c < width; ++c) {
      if (is_target[r * width + c]) last = static_cast<std::int64_t>(c);
      if (last != kNone) row_dist[r * width + c] = static_cast<std::int64_t>(c) - last;
    }
    last = kNone;
    for (std::size_t c = width; c-- > 0;) {
      if (is_target[r * width + c]) last = static_cast<std::int64_t>(c);
      if (last != kNone) row_dist[r * width + c] = std::min(row_dist[r * width + c], last - static_cast<std::int64_t>(c));
    }
  }
  std::vector<double> out;
  out.reserve(query.size());
  for (std::size_t q : query) {
    const std::int64_t qr = static_cast<std::int64_t>(q / width);
    const std::size_t qc = q % width;
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for (std::size_t r = 0; r < height; ++r) {
      const std::int64_t g = row_dist[r * width + qc];
      if (g == kNone) continue;
      const std::int64_t dr = static_cast<std::int64_t>(r) - qr;
      best = std::min(best, dr * dr + g * g);
    }
    out.push_back(static_cast<double>(best));
  }
  return out;
}

}  // namespace detail

/// 95th percentile of the symmetric boundary-to-boundary nearest distances between two masks.
/// Both empty: 0. Exactly one empty: +infinity.
inline double hd95(const std::vector<bool>& pred, const std::vector<bool>& gt, std::size_t height, std::size_t width,
                   double spacing = 1.0) {
  if (pred.size() != height * width || gt.size() != height * width) throw ShapeError("hd95: mask size mismatch");
  const auto bp = boundary_pixels(pred, height, width);
  const auto bg = boundary_pixels(gt, height, width);
  if (bp.empty() && bg.empty()) return 0.0;
  if (bp.empty() || bg.empty()) return std::numeric_limits<double>::infinity();
  std::vector<double> d = detail::nearest_squared_distances(bp, bg, height, width);
  const std::vector<double> back = detail::nearest_squared_distances(bg, bp, height, width);
  d.insert(d.end(), back.begin(), back.end());
  for (double& v : d) v = std::sqrt(v) * spacing;
  return percentile(std::move(d), 0.95);
}

inline std::vector<bool> class_mask(const LabelMap& map, std::uint8_t cls) {
  std::vector<bool> out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = map.labels[i] == cls;
  return out;
}

inline double hd95(const LabelMap& pred, const LabelMap& gt, std::uint8_t cls = 1, double spacing = 1.0) {
  require_same_extent(pred, gt, "hd95");
  return hd95(class_mask(pred, cls), class_mask(gt, cls), pred.height, pred.width, spacing);
}

}  // namespace vmunet
