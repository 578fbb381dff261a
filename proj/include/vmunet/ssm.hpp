#pragma once

// Selective state-space (S6) kernel.
//
//   A_bar = exp(delta * a)
//   B_bar = (delta * a)^-1 (exp(delta * a) - 1) * delta * b
//   h_t   = A_bar_t h_{t-1} + B_bar_t x_t
//   y_t   = C_t h_t + D x_t
//
// A is diagonal per channel, stored as [D, N]. delta is per step and channel,
// B and C are per step and shared across channels.

#include <atomic>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vmunet/error.hpp"
#include "vmunet/ops.hpp"
#include "vmunet/random.hpp"
#include "vmunet/tensor.hpp"

namespace vmunet::ssm {

namespace testing {
/// Mutation hook for the verification suite: flips the sign of B_bar everywhere.
inline std::atomic<bool> flip_bbar_sign{false};
}  // namespace testing

/// |delta * a| below this uses the Taylor expansion of expm1(z)/z.
inline constexpr double kSeriesThreshold = 1e-8;

/// expm1(z) / z, the ZOH input gain per unit (delta * b).
inline double zoh_gain(double z) {
  if (std::abs(z) < kSeriesThreshold) return 1.0 + z * (0.5 + z / 6.0);
  return std::expm1(z) / z;
}

// d/dz [expm1(z)/z]. The closed form cancels badly near 0, so the series takes over earlier.
inline double zoh_gain_derivative(double z) {
  if (std::abs(z) < 1e-2) {
    return 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z * (1.0 / 144.0 + z / 840.0))));
  }
  const double e = std::exp(z);
  return (e * (z - 1.0) + 1.0) / (z * z);
}

struct ZohScalar {
  double a_bar;
  double b_bar;
};

/// Scalar ZOH for one (delta, a, b) triple.
inline ZohScalar zoh(double delta, double a, double b) {
  const double z = delta * a;
  double b_bar = delta * zoh_gain(z) * b;
  if (testing::flip_bbar_sign.load(std::memory_order_relaxed)) b_bar = -b_bar;
  return {std::exp(z), b_bar};
}

struct Discretized {
  Tensor a_bar;  // [L, D, N]
  Tensor b_bar;  // [L, D, N]
};

/// Zero-order-hold discretisation. `b` is either [N] (shared) or [L, N]; delta is [L, D].
inline Discretized discretize_zoh(const Tensor& a_diag, const Tensor& b, const Tensor& delta) {
  if (a_diag.rank() != 2 || delta.rank() != 2 || delta.dim(1) != a_diag.dim(0)) {
    throw ShapeError("discretize_zoh: A " + to_string(a_diag.shape()) + " incompatible with delta " +
                     to_string(delta.shape()));
  }
  const std::size_t L = delta.dim(0), D = a_diag.dim(0), N = a_diag.dim(1);
  const bool per_step = b.rank() == 2;
  if (!(b.shape() == Shape{N} || b.shape() == Shape{L, N})) {
    throw ShapeError("discretize_zoh: B must be [N] or [L, N], got " + to_string(b.shape()));
  }
  std::vector<double> a_bar(L * D * N), b_bar(L * D * N);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      const double dt = delta[t * D + d];
      if (!(dt > 0.0)) throw std::domain_error("discretize_zoh: delta must be positive, got " + std::to_string(dt));
      for (std::size_t n = 0; n < N; ++n) {
        const auto [ab, bb] = zoh(dt, a_diag[d * N + n], per_step ? b[t * N + n] : b[n]);
        a_bar[(t * D + d) * N + n] = ab;
        b_bar[(t * D + d) * N + n] = bb;
      }
    }
  return {Tensor({L, D, N}, std::move(a_bar)), Tensor({L, D, N}, std::move(b_bar))};
}

/// Sequential selective scan with per-step delta [L,D], B [L,N], C [L,N].
/// Inputs: x [L,D], a [D,N], d_skip [D]; optional initial state h0 [D,N].
inline Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                             const Tensor& d_skip, const std::optional<Tensor>& h0 = std::nullopt) {
  if (x.rank() != 2 || x.dim(0) == 0) throw ShapeError("selective_scan: x must be [L, D] with L >= 1, got " + to_string(x.shape()));
  const std::size_t L = x.dim(0), D = x.dim(1);
  if (a.rank() != 2 || a.dim(0) != D) throw ShapeError("selective_scan: A must be [D, N], got " + to_string(a.shape()));
  const std::size_t N = a.dim(1);
  if (delta.shape() != Shape{L, D}) throw ShapeError("selective_scan: delta must be " + to_string({L, D}) + ", got " + to_string(delta.shape()));
  if (b.shape() != Shape{L, N}) throw ShapeError("selective_scan: B must be " + to_string({L, N}) + ", got " + to_string(b.shape()));
  if (c.shape() != Shape{L, N}) throw ShapeError("selective_scan: C must be " + to_string({L, N}) + ", got " + to_string(c.shape()));
  if (d_skip.shape() != Shape{D}) throw ShapeError("selective_scan: D must be " + to_string({D}) + ", got " + to_string(d_skip.shape()));
  if (h0 && h0->shape() != Shape{D, N}) throw ShapeError("selective_scan: h0 must be " + to_string({D, N}));

  // states[t] holds h_t; states[0] is h0.
  std::vector<double> states((L + 1) * D * N, 0.0);
  if (h0) std::copy(h0->data().begin(), h0->data().end(), states.begin());
  std::vector<double> out(L * D, 0.0);
  const auto X = x.data(), DT = delta.data(), A = a.data(), Bm = b.data(), Cm = c.data(), Ds = d_skip.data();
  for (std::size_t t = 0; t < L; ++t) {
    const double* prev = states.data() + t * D * N;
    double* cur = states.data() + (t + 1) * D * N;
    for (std::size_t d = 0; d < D; ++d) {
      const double dt = DT[t * D + d];
      const double xv = X[t * D + d];
      double y = Ds[d] * xv;
      for (std::size_t n = 0; n < N; ++n) {
        const auto [ab, bb] = zoh(dt, A[d * N + n], Bm[t * N + n]);
        const double h = ab * prev[d * N + n] + bb * xv;
        cur[d * N + n] = h;
        y += Cm[t * N + n] * h;
      }
      out[t * D + d] = y;
    }
  }

  const bool tracked = h0 ? detail::needs_grad(x, delta, a, b, c, d_skip, *h0) : detail::needs_grad(x, delta, a, b, c, d_skip);
  Tensor y = detail::make_result({L, D}, std::move(out), tracked);
  detail::check_finite(y, "selective_scan");
  if (tracked) {
    detail::ImplPtr h0i = h0 ? h0->impl() : nullptr;
    detail::record([xi = x.impl(), dti = delta.impl(), ai = a.impl(), bi = b.impl(), ci = c.impl(), dsi = d_skip.impl(),
                    h0i, yi = y.impl(), states = std::move(states), L, D, N] {
      if (yi->grad.empty()) return;
      const auto& G = yi->grad;
      std::vector<double> gx(L * D, 0.0), gdt(L * D, 0.0), ga(D * N, 0.0), gb(L * N, 0.0), gc(L * N, 0.0), gds(D, 0.0);
      std::vector<double> gh(D * N, 0.0);  // dL/dh_t flowing backwards
      const auto& X = xi->data;
      const auto& DT = dti->data;
      const auto& A = ai->data;
      const auto& Bm = bi->data;
      const auto& Cm = ci->data;
      const auto& Ds = dsi->data;
      const double sign = testing::flip_bbar_sign.load(std::memory_order_relaxed) ? -1.0 : 1.0;
      for (std::size_t t = L; t-- > 0;) {
        const double* prev = states.data() + t * D * N;
        const double* cur = states.data() + (t + 1) * D * N;
        for (std::size_t d = 0; d < D; ++d) {
          const double gy = G[t * D + d];
          const double xv = X[t * D + d];
          const double dt = DT[t * D + d];
          gds[d] += gy * xv;
          double gxv = gy * Ds[d];
          double gdtv = 0.0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t dn = d * N + n;
            gc[t * N + n] += gy * cur[dn];
            const double g = gh[dn] + gy * Cm[t * N + n];
            const double av = A[dn];
            const double bv = Bm[t * N + n];
            const double z = dt * av;
            const double a_bar = std::exp(z);
            const double gain = zoh_gain(z);
            const double b_bar = sign * dt * gain * bv;
            const double g_abar = g * prev[dn];
            const double g_bbar = g * xv * sign;
            gxv += g * b_bar;
            // d A_bar/d delta = a e^z, d A_bar/d a = delta e^z
            // d(delta gain(delta a))/d delta = e^z, d/d a = delta^2 gain'(z)
            gdtv += g_abar * a_bar * av + g_bbar * bv * a_bar;
            ga[dn] += g_abar * a_bar * dt + g_bbar * bv * dt * dt * zoh_gain_derivative(z);
            gb[t * N + n] += g_bbar * dt * gain;
            gh[dn] = g * a_bar;
          }
          gx[t * D + d] += gxv;
          gdt[t * D + d] += gdtv;
        }
      }
      auto accumulate = [](const detail::ImplPtr& p, const std::vector<double>& g) {
        if (!p || !p->requires_grad) return;
        auto& dst = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      };
      accumulate(xi, gx);
      accumulate(dti, gdt);
      accumulate(ai, ga);
      accumulate(bi, gb);
      accumulate(ci, gc);
      accumulate(dsi, gds);
      accumulate(h0i, gh);
    });
  }
  return y;
}

/// Learnable quantities of one S6 block operating on D channels with state size N.
///
/// delta = softplus((x W_delta_down) W_delta_up + b_delta), B = x W_B, C = x W_C.
/// `a` may be a leaf or derived (the network keeps log(-a) as the parameter).
struct SsmParams {
  Tensor a;             // [D, N]
  Tensor d_skip;        // [D]
  Tensor w_delta_down;  // [D, R]
  Tensor w_delta_up;    // [R, D]
  Tensor b_delta;       // [D]
  Tensor w_b;           // [D, N]
  Tensor w_c;           // [D, N]

  std::size_t channels() const { return a.dim(0); }
  std::size_t state_dim() const { return a.dim(1); }
  std::size_t delta_rank() const { return w_delta_down.dim(1); }
};

/// Rank of the low-rank delta projection for a block of `model_channels`.
inline std::size_t delta_rank_for(std::size_t model_channels) { return std::max<std::size_t>(1, (model_channels + 15) / 16); }

/// softplus^-1, used to place the initial delta.
inline double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

/// a[d,n] = -(n+1), D = 1, delta bias log-uniform in [1e-3, 1e-1], projections ~ U(+-1/sqrt(fan_in)).
inline SsmParams init_ssm_params(std::size_t channels, std::size_t state_dim, std::size_t rank, Rng& rng) {
  auto uniform_tensor = [&rng](Shape shape, double bound) {
    std::vector<double> v(numel(shape));
    for (double& e : v) e = uniform(rng, -bound, bound);
    return Tensor(std::move(shape), std::move(v), true);
  };
  SsmParams p;
  std::vector<double> a(channels * state_dim);
  for (std::size_t d = 0; d < channels; ++d)
    for (std::size_t n = 0; n < state_dim; ++n) a[d * state_dim + n] = -static_cast<double>(n + 1);
  p.a = Tensor({channels, state_dim}, std::move(a), true);
  p.d_skip = Tensor::ones({channels}, true);
  p.w_delta_down = uniform_tensor({channels, rank}, 1.0 / std::sqrt(static_cast<double>(channels)));
  p.w_delta_up = uniform_tensor({rank, channels}, 1.0 / std::sqrt(static_cast<double>(rank)));
  std::vector<double> bias(channels);
  for (double& e : bias) {
    const double dt = std::exp(uniform(rng, std::log(1e-3), std::log(1e-1)));
    e = inverse_softplus(dt);
  }
  p.b_delta = Tensor({channels}, std::move(bias), true);
  p.w_b = uniform_tensor({channels, state_dim}, 1.0 / std::sqrt(static_cast<double>(channels)));
  p.w_c = uniform_tensor({channels, state_dim}, 1.0 / std::sqrt(static_cast<double>(channels)));
  return p;
}

/// Input-dependent projections of one sequence x [L, D].
struct Projections {
  Tensor delta;  // [L, D], positive
  Tensor b;      // [L, N]
  Tensor c;      // [L, N]
};

inline Projections project(const Tensor& x, const SsmParams& p) {
  Tensor low = linear(x, p.w_delta_down);
  return {softplus(linear(low, p.w_delta_up, p.b_delta)), linear(x, p.w_b), linear(x, p.w_c)};
}

/// Full S6 block over x [L, D].
inline Tensor s6_scan(const Tensor& x, const SsmParams& p, const std::optional<Tensor>& h0 = std::nullopt) {
  if (x.rank() != 2 || x.dim(1) != p.channels()) {
    throw ShapeError("s6_scan: x " + to_string(x.shape()) + " does not match " + std::to_string(p.channels()) +
                     " channels");
  }
  Projections proj = project(x, p);
  return selective_scan(x, proj.delta, p.a, proj.b, proj.c, p.d_skip, h0);
}

/// Structured kernel K = (C B_bar, C A_bar B_bar, ..., C A_bar^{L-1} B_bar) for a scalar LTI system.
inline std::vector<double> lti_kernel(std::size_t length, double a_bar, double b_bar, double c) {
  std::vector<double> k(length);
  double power = 1.0;
  for (std::size_t i = 0; i < length; ++i) {
    k[i] = c * power * b_bar;
    power *= a_bar;
  }
  return k;
}

/// Causal convolution y = x * K; the global-convolution view of a time-invariant scan (no skip term).
inline std::vector<double> lti_conv_oracle(std::span<const double> x, double a_bar, double b_bar, double c) {
  const std::vector<double> k = lti_kernel(x.size(), a_bar, b_bar, c);
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t s = 0; s <= t; ++s) y[t] += k[t - s] * x[s];
  return y;
}

}  // namespace vmunet::ssm
