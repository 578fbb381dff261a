#pragma once

// 2D selective scan: unfold an [H, W, D] grid into four 1D sequences, run an
// independent S6 block on each, then scatter every output back to the grid and sum.
//
// Direction 0: row-major from the top-left corner.
// Direction 1: column-major from the top-left corner.
// Direction 2: reversal of direction 0 (from the bottom-right corner).
// Direction 3: reversal of direction 1.

#include <array>
#include <cstddef>
#include <numeric>
#include <vector>

#include "vmunet/error.hpp"
#include "vmunet/ops.hpp"
#include "vmunet/ssm.hpp"
#include "vmunet/tensor.hpp"

namespace vmunet::ss2d {

inline constexpr std::size_t kDirections = 4;

/// index_maps[k][s] is the flat grid position (row * W + col) visited at sequence step s.
using IndexMaps = std::array<std::vector<std::size_t>, kDirections>;

struct DirectionalSequences {
  std::size_t height = 0;
  std::size_t width = 0;
  std::array<Tensor, kDirections> sequences;  // each [H*W, D]
  IndexMaps index_maps;
};

inline IndexMaps make_index_maps(std::size_t height, std::size_t width) {
  const std::size_t L = height * width;
  IndexMaps maps;
  maps[0].resize(L);
  std::iota(maps[0].begin(), maps[0].end(), std::size_t{0});
  maps[1].reserve(L);
  for (std::size_t c = 0; c < width; ++c)
    for (std::size_t r = 0; r < height; ++r) maps[1].push_back(r * width + c);
  maps[2].assign(maps[0].rbegin(), maps[0].rend());
  maps[3].assign(maps[1].rbegin(), maps[1].rend());
  return maps;
}

namespace detail {

// Expands a per-position map to a per-element gather over D channels.
inline std::vector<std::size_t> channel_expand(const std::vector<std::size_t>& positions, std::size_t channels) {
  std::vector<std::size_t> source;
  source.reserve(positions.size() * channels);
  for (std::size_t p : positions)
    for (std::size_t c = 0; c < channels; ++c) source.push_back(p * channels + c);
  return source;
}

inline std::vector<std::size_t> inverse(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t s = 0; s < perm.size(); ++s) inv[perm[s]] = s;
  return inv;
}

}  // namespace detail

inline DirectionalSequences scan_expand(const Tensor& x) {
  if (x.rank() != 3 || x.dim(0) == 0 || x.dim(1) == 0) {
    throw ShapeError("scan_expand: expected non-empty [H, W, D], got " + to_string(x.shape()));
  }
  const std::size_t H = x.dim(0), W = x.dim(1), D = x.dim(2);
  DirectionalSequences out;
  out.height = H;
  out.width = W;
  out.index_maps = make_index_maps(H, W);
  for (std::size_t k = 0; k < kDirections; ++k) {
    out.sequences[k] = gather(x, detail::channel_expand(out.index_maps[k], D), {H * W, D});
  }
  return out;
}

/// Scatters each [H*W, D] sequence back to its grid positions and sums the four grids.
inline Tensor scan_merge(const std::array<Tensor, kDirections>& sequences, const IndexMaps& index_maps, std::size_t height,
                         std::size_t width) {
  const std::size_t L = height * width;
  Tensor total;
  for (std::size_t k = 0; k < kDirections; ++k) {
    const Tensor& seq = sequences[k];
    if (seq.rank() != 2 || seq.dim(0) != L || index_maps[k].size() != L) {
      throw ShapeError("scan_merge: direction " + std::to_string(k) + " has shape " + to_string(seq.shape()) +
                       ", expected " + std::to_string(L) + " steps");
    }
    const std::size_t D = seq.dim(1);
    Tensor grid = gather(seq, detail::channel_expand(detail::inverse(index_maps[k]), D), {height, width, D});
    total = k == 0 ? grid : add(total, grid);
  }
  return total;
}

/// expand -> per-direction S6 -> merge. Output has the input's shape.
inline Tensor ss2d_forward(const Tensor& x, const std::array<ssm::SsmParams, kDirections>& params) {
  DirectionalSequences seqs = scan_expand(x);
  std::array<Tensor, kDirections> outputs;
  for (std::size_t k = 0; k < kDirections; ++k) outputs[k] = ssm::s6_scan(seqs.sequences[k], params[k]);
  return scan_merge(outputs, seqs.index_maps, seqs.height, seqs.width);
}

}  // namespace vmunet::ss2d
