#pragma once

// Asymmetric U-shaped network built from VSS blocks.
//
//   patch embed (4x4) -> encoder stages [C, 2C, 4C, 8C], patch merge after the first three
//   decoder stages [8C, 4C, 2C, C], patch expand before the last three,
//   additive skips at H/16, H/8, H/4 -> 4x expand -> class projection (logits).

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vmunet/error.hpp"
#include "vmunet/layers.hpp"
#include "vmunet/ops.hpp"
#include "vmunet/random.hpp"
#include "vmunet/tensor.hpp"
#include "vmunet/vss.hpp"

namespace vmunet {

inline constexpr std::size_t kStages = 4;
inline constexpr std::size_t kPatchSize = 4;
/// Total downsampling: 4x patch embedding, then three 2x merges.
inline constexpr std::size_t kSpatialDivisor = 32;

struct NetworkConfig {
  std::size_t base_channels = 96;
  std::vector<std::size_t> encoder_depths{2, 2, 2, 2};
  std::vector<std::size_t> decoder_depths{2, 2, 2, 1};
  std::size_t state_dim = 16;
  std::size_t ssm_expand_ratio = 2;
  std::size_t dw_kernel = 3;
  double dropout_p = 0.0;
  /// Output logit channels; 1 means a binary (sigmoid) task.
  std::size_t num_classes = 1;
  std::size_t input_height = 256;
  std::size_t input_width = 256;
  bool skip_connections = true;
  bool share_projections = false;

  bool operator==(const NetworkConfig&) const = default;

  VssBlockOptions block_options() const {
    return {state_dim, ssm_expand_ratio, dw_kernel, dropout_p, share_projections};
  }

  std::size_t stage_channels(std::size_t stage) const { return base_channels << stage; }

  /// Throws ConfigError on the first violated invariant.
  void validate() const {
    if (base_channels == 0) throw ConfigError("base_channels must be positive");
    if (encoder_depths.size() != kStages || decoder_depths.size() != kStages) {
      throw ConfigError("encoder_depths and decoder_depths need exactly 4 entries");
    }
    for (std::size_t d : encoder_depths)
      if (d == 0) throw ConfigError("encoder_depths entries must be >= 1");
    for (std::size_t d : decoder_depths)
      if (d == 0) throw ConfigError("decoder_depths entries must be >= 1");
    if (state_dim == 0) throw ConfigError("state_dim must be positive");
    if (ssm_expand_ratio == 0) throw ConfigError("ssm_expand_ratio must be positive");
    if (dw_kernel % 2 == 0) throw ConfigError("dw_kernel must be odd");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
    if (num_classes == 0) throw ConfigError("num_classes must be positive");
    if (input_height == 0 || input_width == 0 || input_height % kSpatialDivisor || input_width % kSpatialDivisor) {
      throw ConfigError("input_size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                        " must be a positive multiple of 32 in both extents");
    }
  }
};

inline void require_divisible_input(const Tensor& image, std::size_t channels = 3) {
  if (image.rank() != 3 || image.dim(2) != channels) {
    throw ShapeError("expected an image of shape [H, W, " + std::to_string(channels) + "], got " + to_string(image.shape()));
  }
  if (image.dim(0) == 0 || image.dim(1) == 0 || image.dim(0) % kSpatialDivisor || image.dim(1) % kSpatialDivisor) {
    throw ShapeError("image extents " + std::to_string(image.dim(0)) + "x" + std::to_string(image.dim(1)) +
                     " must be divisible by 32");
  }
}

/// [H, W, D] -> [H/f, W/f, f*f*D]; each output vector lists the f x f block row by row (TL, TR, BL, BR for f = 2).
inline Tensor space_to_depth(const Tensor& x, std::size_t f) {
  if (x.rank() != 3 || x.dim(0) % f || x.dim(1) % f) {
    throw ShapeError("space_to_depth: extents of " + to_string(x.shape()) + " not divisible by " + std::to_string(f));
  }
  const std::size_t H = x.dim(0), W = x.dim(1), D = x.dim(2);
  const std::size_t Ho = H / f, Wo = W / f;
  std::vector<std::size_t> source;
  source.reserve(x.numel());
  for (std::size_t i = 0; i < Ho; ++i)
    for (std::size_t j = 0; j < Wo; ++j)
      for (std::size_t u = 0; u < f; ++u)
        for (std::size_t v = 0; v < f; ++v)
          for (std::size_t c = 0; c < D; ++c) source.push_back(((i * f + u) * W + (j * f + v)) * D + c);
  return gather(x, std::move(source), {Ho, Wo, f * f * D});
}

/// Inverse of space_to_depth: [H, W, f*f*D] -> [f*H, f*W, D].
inline Tensor depth_to_space(const Tensor& x, std::size_t f) {
  if (x.rank() != 3 || x.dim(2) % (f * f)) {
    throw ShapeError("depth_to_space: channels of " + to_string(x.shape()) + " not divisible by " + std::to_string(f * f));
  }
  const std::size_t H = x.dim(0), W = x.dim(1), D = x.dim(2) / (f * f);
  const std::size_t Ho = H * f, Wo = W * f;
  std::vector<std::size_t> source;
  source.reserve(x.numel());
  for (std::size_t r = 0; r < Ho; ++r)
    for (std::size_t s = 0; s < Wo; ++s)
      for (std::size_t c = 0; c < D; ++c) {
        const std::size_t i = r / f, u = r % f, j = s / f, v = s % f;
        source.push_back((i * W + j) * (f * f * D) + (u * f + v) * D + c);
      }
  return gather(x, std::move(source), {Ho, Wo, D});
}

/// 4x4 non-overlapping patches of [H, W, 3] projected to C channels, then layer-normalised.
struct PatchEmbed {
  Linear proj;
  LayerNorm norm;

  PatchEmbed() = default;
  PatchEmbed(std::size_t in_channels, std::size_t out_channels, Rng& rng)
      : proj(kPatchSize * kPatchSize * in_channels, out_channels, true, rng), norm(out_channels) {}

  Tensor operator()(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) % kPatchSize || image.dim(1) % kPatchSize) {
      throw ShapeError("patch_embed: extents of " + to_string(image.shape()) + " not divisible by 4");
    }
    return norm(proj(space_to_depth(image, kPatchSize)));
  }
  void collect(const std::string& prefix, ParamList& out) const {
    proj.collect(prefix + ".proj", out);
    norm.collect(prefix + ".norm", out);
  }
  static std::size_t param_count(std::size_t in_channels, std::size_t out_channels) {
    return Linear::param_count(kPatchSize * kPatchSize * in_channels, out_channels, true) + LayerNorm::param_count(out_channels);
  }
};

/// [H, W, D] -> [H/2, W/2, 2D]: concatenate 2x2 neighbours, layer-normalise, project 4D -> 2D.
struct PatchMerge {
  LayerNorm norm;
  Linear reduce;

  PatchMerge() = default;
  PatchMerge(std::size_t dim, Rng& rng) : norm(4 * dim), reduce(4 * dim, 2 * dim, false, rng) {}

  Tensor operator()(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(0) % 2 || x.dim(1) % 2) {
      throw ShapeError("patch_merge: extents of " + to_string(x.shape()) + " must be even");
    }
    return reduce(norm(space_to_depth(x, 2)));
  }
  void collect(const std::string& prefix, ParamList& out) const {
    norm.collect(prefix + ".norm", out);
    reduce.collect(prefix + ".reduce", out);
  }
  static std::size_t param_count(std::size_t dim) { return LayerNorm::param_count(4 * dim) + Linear::param_count(4 * dim, 2 * dim, false); }
};

/// Linear projection, rearrangement of each vector into a factor x factor block, layer norm.
struct PatchExpand {
  Linear expand;
  LayerNorm norm;
  std::size_t factor = 2;

  PatchExpand() = default;
  /// factor 2: D -> 2D -> [2H, 2W, D/2]. factor 4 (final): D -> 16D -> [4H, 4W, D].
  PatchExpand(std::size_t dim, std::size_t factor_, Rng& rng)
      : expand(dim, factor_ == 2 ? 2 * dim : factor_ * factor_ * dim, false, rng),
        norm(factor_ == 2 ? dim / 2 : dim),
        factor(factor_) {
    if (factor_ == 2 && dim % 2) throw ShapeError("patch_expand: channel count must be even, got " + std::to_string(dim));
  }

  Tensor operator()(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(2) != expand.weight.dim(0)) {
      throw ShapeError("patch_expand: expected [H, W, " + std::to_string(expand.weight.dim(0)) + "], got " + to_string(x.shape()));
    }
    return norm(depth_to_space(expand(x), factor));
  }
  void collect(const std::string& prefix, ParamList& out) const {
    expand.collect(prefix + ".expand", out);
    norm.collect(prefix + ".norm", out);
  }
  static std::size_t param_count(std::size_t dim, std::size_t factor) {
    return factor == 2 ? Linear::param_count(dim, 2 * dim, false) + LayerNorm::param_count(dim / 2)
                       : Linear::param_count(dim, factor * factor * dim, false) + LayerNorm::param_count(dim);
  }
};

class VmUnet {
 public:
  VmUnet(const NetworkConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng = derive_stream(seed, "init");
    const VssBlockOptions opt = config_.block_options();
    embed_ = PatchEmbed(3, config_.base_channels, rng);
    for (std::size_t s = 0; s < kStages; ++s) {
      const std::size_t dim = config_.stage_channels(s);
      for (std::size_t b = 0; b < config_.encoder_depths[s]; ++b) encoder_[s].emplace_back(dim, opt, rng);
      if (s + 1 < kStages) merges_[s] = PatchMerge(dim, rng);
    }
    for (std::size_t s = 0; s < kStages; ++s) {
      const std::size_t dim = config_.stage_channels(kStages - 1 - s);
      if (s > 0) expands_[s - 1] = PatchExpand(2 * dim, 2, rng);
      for (std::size_t b = 0; b < config_.decoder_depths[s]; ++b) decoder_[s].emplace_back(dim, opt, rng);
    }
    final_expand_ = PatchExpand(config_.base_channels, kPatchSize, rng);
    head_ = Linear(config_.base_channels, config_.num_classes, true, rng);
  }

  /// image [H, W, 3] -> logits [H, W, num_classes]. H and W need not match the configured input_size
  /// but must be divisible by 32. `dropout_rng` is required only when training with dropout.
  Tensor forward(const Tensor& image, Mode mode = Mode::Eval, Rng* dropout_rng = nullptr) const {
    require_divisible_input(image);
    if (mode == Mode::Train && config_.dropout_p > 0.0 && dropout_rng == nullptr) {
      throw std::invalid_argument("VmUnet::forward: training with dropout needs an rng");
    }
    Tensor x = embed_(image);
    std::array<Tensor, kStages - 1> skips;
    for (std::size_t s = 0; s < kStages; ++s) {
      for (const VssBlock& block : encoder_[s]) x = block(x, mode, dropout_rng);
      if (s + 1 < kStages) {
        skips[s] = x;
        x = merges_[s](x);
      }
    }
    for (std::size_t s = 0; s < kStages; ++s) {
      if (s > 0) {
        x = expands_[s - 1](x);
        if (config_.skip_connections) {
          const Tensor& skip = skips[kStages - 1 - s];
          if (skip.shape() != x.shape()) {
            throw std::logic_error("skip connection shape mismatch: " + to_string(skip.shape()) + " vs " + to_string(x.shape()));
          }
          x = add(x, skip);
        }
      }
      for (const VssBlock& block : decoder_[s]) x = block(x, mode, dropout_rng);
    }
    return head_(final_expand_(x));
  }

  /// Every learnable tensor, in a fixed registration order.
  ParamList parameters() const {
    ParamList out;
    embed_.collect("embed", out);
    for (std::size_t s = 0; s < kStages; ++s) {
      for (std::size_t b = 0; b < encoder_[s].size(); ++b)
        encoder_[s][b].collect("encoder." + std::to_string(s) + ".block" + std::to_string(b), out);
      if (s + 1 < kStages) merges_[s].collect("encoder." + std::to_string(s) + ".merge", out);
    }
    for (std::size_t s = 0; s < kStages; ++s) {
      if (s > 0) expands_[s - 1].collect("decoder." + std::to_string(s) + ".expand", out);
      for (std::size_t b = 0; b < decoder_[s].size(); ++b)
        decoder_[s][b].collect("decoder." + std::to_string(s) + ".block" + std::to_string(b), out);
    }
    final_expand_.collect("final.expand", out);
    head_.collect("final.head", out);
    return out;
  }

  const NetworkConfig& config() const noexcept { return config_; }

 private:
  NetworkConfig config_;
  PatchEmbed embed_;
  std::array<std::vector<VssBlock>, kStages> encoder_;
  std::array<PatchMerge, kStages - 1> merges_;
  std::array<PatchExpand, kStages - 1> expands_;
  std::array<std::vector<VssBlock>, kStages> decoder_;
  PatchExpand final_expand_;
  Linear head_;
};

/// Exact number of learnable scalars, computed from the config without building the network.
inline std::size_t count_params(const NetworkConfig& config) {
  config.validate();
  const VssBlockOptions opt = config.block_options();
  std::size_t total = PatchEmbed::param_count(3, config.base_channels);
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t dim = config.stage_channels(s);
    total += config.encoder_depths[s] * VssBlock::param_count(dim, opt);
    if (s + 1 < kStages) total += PatchMerge::param_count(dim);
  }
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t dim = config.stage_channels(kStages - 1 - s);
    if (s > 0) total += PatchExpand::param_count(2 * dim, 2);
    total += config.decoder_depths[s] * VssBlock::param_count(dim, opt);
  }
  total += PatchExpand::param_count(config.base_channels, kPatchSize);
  total += Linear::param_count(config.base_channels, config.num_classes, true);
  return total;
}

}  // namespace vmunet
