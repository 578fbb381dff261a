#pragma once

// Visual state-space block:
//
//   x ── LN ─┬─ Linear ─ SiLU ──────────────────────────────┐
//            └─ Linear ─ DWConv ─ SiLU ─ SS2D ─ LN ─────────(*)─ Linear ─ Dropout ─(+)─ out
//   └──────────────────────────────────────────────────────────────────────────────┘

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "vmunet/layers.hpp"
#include "vmunet/ops.hpp"
#include "vmunet/random.hpp"
#include "vmunet/ss2d.hpp"
#include "vmunet/ssm.hpp"
#include "vmunet/tensor.hpp"

namespace vmunet {

enum class Mode { Train, Eval };

/// Input-dependent projections of one direction (W_delta_down, W_delta_up, b_delta, W_B, W_C).
struct SsmProjection {
  Tensor w_delta_down;
  Tensor w_delta_up;
  Tensor b_delta;
  Tensor w_b;
  Tensor w_c;
};

/// SS2D with learnable per-direction A (stored as log(-A)) and D, and per-direction or shared projections.
class Ss2dModule {
 public:
  Ss2dModule() = default;
  Ss2dModule(std::size_t channels, std::size_t state_dim, std::size_t delta_rank, bool share_projections, Rng& rng)
      : channels_(channels), state_dim_(state_dim) {
    const std::size_t sets = share_projections ? 1 : ss2d::kDirections;
    for (std::size_t k = 0; k < ss2d::kDirections; ++k) {
      ssm::SsmParams init = ssm::init_ssm_params(channels, state_dim, delta_rank, rng);
      std::vector<double> log_neg_a(channels * state_dim);
      for (std::size_t i = 0; i < log_neg_a.size(); ++i) log_neg_a[i] = std::log(-init.a[i]);
      a_log_[k] = Tensor({channels, state_dim}, std::move(log_neg_a), true);
      d_skip_[k] = init.d_skip;
      if (k < sets) projections_.push_back({init.w_delta_down, init.w_delta_up, init.b_delta, init.w_b, init.w_c});
    }
  }

  /// Materialises the SsmParams of direction k (A = -exp(A_log) is recorded on the tape).
  ssm::SsmParams direction_params(std::size_t k) const {
    const SsmProjection& proj = projections_[projections_.size() == 1 ? 0 : k];
    return {scale(exp(a_log_[k]), -1.0), d_skip_[k], proj.w_delta_down, proj.w_delta_up, proj.b_delta, proj.w_b, proj.w_c};
  }

  Tensor operator()(const Tensor& x) const {
    std::array<ssm::SsmParams, ss2d::kDirections> params;
    for (std::size_t k = 0; k < ss2d::kDirections; ++k) params[k] = direction_params(k);
    return ss2d::ss2d_forward(x, params);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t k = 0; k < ss2d::kDirections; ++k) {
      const std::string p = prefix + ".dir" + std::to_string(k);
      out.emplace_back(p + ".a_log", a_log_[k]);
      out.emplace_back(p + ".d_skip", d_skip_[k]);
    }
    for (std::size_t s = 0; s < projections_.size(); ++s) {
      const std::string p = prefix + (projections_.size() == 1 ? std::string(".proj") : ".proj" + std::to_string(s));
      out.emplace_back(p + ".w_delta_down", projections_[s].w_delta_down);
      out.emplace_back(p + ".w_delta_up", projections_[s].w_delta_up);
      out.emplace_back(p + ".b_delta", projections_[s].b_delta);
      out.emplace_back(p + ".w_b", projections_[s].w_b);
      out.emplace_back(p + ".w_c", projections_[s].w_c);
    }
  }

  static std::size_t param_count(std::size_t channels, std::size_t state_dim, std::size_t delta_rank, bool share) {
    const std::size_t per_direction = channels * state_dim + channels;
    const std::size_t per_projection = channels * delta_rank + delta_rank * channels + channels + 2 * channels * state_dim;
    return ss2d::kDirections * per_direction + (share ? 1 : ss2d::kDirections) * per_projection;
  }

 private:
  std::size_t channels_ = 0;
  std::size_t state_dim_ = 0;
  std::array<Tensor, ss2d::kDirections> a_log_;
  std::array<Tensor, ss2d::kDirections> d_skip_;
  std::vector<SsmProjection> projections_;
};

struct VssBlockOptions {
  std::size_t state_dim = 16;
  std::size_t expand_ratio = 2;
  std::size_t dw_kernel = 3;
  double dropout_p = 0.0;
  bool share_projections = false;
};

class VssBlock {
 public:
  VssBlock() = default;
  VssBlock(std::size_t dim, const VssBlockOptions& opt, Rng& rng)
      : dim_(dim),
        dropout_p_(opt.dropout_p),
        norm_(dim),
        in_gate_(dim, opt.expand_ratio * dim, false, rng),
        in_main_(dim, opt.expand_ratio * dim, false, rng),
        conv_(opt.expand_ratio * dim, opt.dw_kernel, rng),
        ss2d_(opt.expand_ratio * dim, opt.state_dim, ssm::delta_rank_for(dim), opt.share_projections, rng),
        out_norm_(opt.expand_ratio * dim),
        out_proj_(opt.expand_ratio * dim, dim, false, rng) {}

  /// x is [H, W, dim]; the output has the same shape.
  Tensor operator()(const Tensor& x, Mode mode, Rng* dropout_rng) const {
    if (x.rank() != 3 || x.dim(2) != dim_) {
      throw ShapeError("VssBlock: expected [H, W, " + std::to_string(dim_) + "], got " + to_string(x.shape()));
    }
    Tensor h = norm_(x);
    Tensor gate = silu(in_gate_(h));
    Tensor main = silu(conv_(in_main_(h)));
    main = out_norm_(ss2d_(main));
    Tensor y = out_proj_(mul(main, gate));
    if (mode == Mode::Train && dropout_p_ > 0.0) y = dropout(y, dropout_p_, true, *dropout_rng);
    Tensor out = add(x, y);
    if (out.shape() != x.shape()) throw std::logic_error("VssBlock: residual shape changed");
    return out;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    norm_.collect(prefix + ".norm", out);
    in_gate_.collect(prefix + ".in_gate", out);
    in_main_.collect(prefix + ".in_main", out);
    conv_.collect(prefix + ".conv", out);
    ss2d_.collect(prefix + ".ss2d", out);
    out_norm_.collect(prefix + ".out_norm", out);
    out_proj_.collect(prefix + ".out_proj", out);
  }

  static std::size_t param_count(std::size_t dim, const VssBlockOptions& opt) {
    const std::size_t inner = opt.expand_ratio * dim;
    return LayerNorm::param_count(dim) + 2 * Linear::param_count(dim, inner, false) +
           DepthwiseConv::param_count(inner, opt.dw_kernel) +
           Ss2dModule::param_count(inner, opt.state_dim, ssm::delta_rank_for(dim), opt.share_projections) +
           LayerNorm::param_count(inner) + Linear::param_count(inner, dim, false);
  }

  std::size_t dim() const noexcept { return dim_; }

 private:
  std::size_t dim_ = 0;
  double dropout_p_ = 0.0;
  LayerNorm norm_;
  Linear in_gate_;
  Linear in_main_;
  DepthwiseConv conv_;
  Ss2dModule ss2d_;
  LayerNorm out_norm_;
  Linear out_proj_;
};

}  // namespace vmunet
