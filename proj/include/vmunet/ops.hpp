#pragma once

// Differentiable primitives. Images are channels-last [H, W, C].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vmunet/error.hpp"
#include "vmunet/random.hpp"
#include "vmunet/tensor.hpp"

namespace vmunet {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// Shared skeleton for pointwise unary ops: forward value and local derivative.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xs[i]);
  const bool tracked = needs_grad(x);
  Tensor y = make_result(x.shape(), std::move(out), tracked);
  check_finite(y, name);
  if (tracked) {
    record([xi = x.impl(), yi = y.impl(), deriv] {
      if (yi->grad.empty() || !xi->requires_grad) return;
      auto& gx = xi->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yi->grad[i] * deriv(xi->data[i], yi->data[i]);
    });
  }
  return y;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  const bool tracked = detail::needs_grad(a, b);
  Tensor y = detail::make_result(a.shape(), std::move(out), tracked);
  if (tracked) {
    detail::record([ai = a.impl(), bi = b.impl(), yi = y.impl()] {
      if (yi->grad.empty()) return;
      for (auto* in : {ai.get(), bi.get()}) {
        if (!in->requires_grad) continue;
        auto& g = in->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i];
      }
    });
  }
  return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  const bool tracked = detail::needs_grad(a, b);
  Tensor y = detail::make_result(a.shape(), std::move(out), tracked);
  if (tracked) {
    detail::record([ai = a.impl(), bi = b.impl(), yi = y.impl()] {
      if (yi->grad.empty()) return;
      if (ai->requires_grad) {
        auto& g = ai->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i];
      }
      if (bi->requires_grad) {
        auto& g = bi->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= yi->grad[i];
      }
    });
  }
  return y;
}

/// Elementwise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  const bool tracked = detail::needs_grad(a, b);
  Tensor y = detail::make_result(a.shape(), std::move(out), tracked);
  detail::check_finite(y, "mul");
  if (tracked) {
    detail::record([ai = a.impl(), bi = b.impl(), yi = y.impl()] {
      if (yi->grad.empty()) return;
      if (ai->requires_grad) {
        auto& g = ai->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        auto& g = bi->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i] * ai->data[i];
      }
    });
  }
  return y;
}

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(x, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(x, "sigmoid", detail::sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

/// x * sigmoid(x)
inline Tensor silu(const Tensor& x) {
  return detail::unary(
      x, "silu", [](double v) { return v * detail::sigmoid_scalar(v); },
      [](double v, double) {
        const double s = detail::sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

/// log(1 + e^x), evaluated without overflow.
inline Tensor softplus(const Tensor& x) {
  return detail::unary(x, "softplus", detail::softplus_scalar, [](double v, double) { return detail::sigmoid_scalar(v); });
}

/// Sum of all elements, as a scalar tensor.
inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const bool tracked = detail::needs_grad(x);
  Tensor y = detail::make_result({}, {total}, tracked);
  if (tracked) {
    detail::record([xi = x.impl(), yi = y.impl()] {
      if (yi->grad.empty() || !xi->requires_grad) return;
      auto& g = xi->ensure_grad();
      for (double& v : g) v += yi->grad[0];
    });
  }
  return y;
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

/// Standard matrix product of [m,k] and [k,n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B[p * n + j];
    }
  }
  const bool tracked = detail::needs_grad(a, b);
  Tensor y = detail::make_result({m, n}, std::move(out), tracked);
  detail::check_finite(y, "matmul");
  if (tracked) {
    detail::record([ai = a.impl(), bi = b.impl(), yi = y.impl(), m, k, n] {
      if (yi->grad.empty()) return;
      const auto& G = yi->grad;
      if (ai->requires_grad) {
        auto& ga = ai->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * bi->data[p * n + j];
            ga[i * k + p] += acc;
          }
      }
      if (bi->requires_grad) {
        auto& gb = bi->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = ai->data[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * G[i * n + j];
          }
      }
    });
  }
  return y;
}

namespace detail {

inline Tensor linear_impl(const Tensor& x, const Tensor& w, const Tensor* bias) {
  if (x.rank() == 0 || w.rank() != 2 || x.shape().back() != w.dim(0)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " + to_string(w.shape()));
  }
  const std::size_t in = w.dim(0), out_dim = w.dim(1);
  if (bias && (bias->rank() != 1 || bias->dim(0) != out_dim)) {
    throw ShapeError("linear: bias " + to_string(bias->shape()) + " does not match " + std::to_string(out_dim) +
                     " outputs");
  }
  const std::size_t rows = x.numel() / in;
  std::vector<double> out(rows * out_dim, 0.0);
  const auto X = x.data();
  const auto W = w.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = out.data() + r * out_dim;
    if (bias)
      for (std::size_t o = 0; o < out_dim; ++o) yr[o] = (*bias)[o];
    for (std::size_t i = 0; i < in; ++i) {
      const double xv = X[r * in + i];
      if (xv == 0.0) continue;
      const double* wr = W.data() + i * out_dim;
      for (std::size_t o = 0; o < out_dim; ++o) yr[o] += xv * wr[o];
    }
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  const bool tracked = bias ? needs_grad(x, w, *bias) : needs_grad(x, w);
  Tensor y = make_result(std::move(shape), std::move(out), tracked);
  check_finite(y, "linear");
  if (tracked) {
    ImplPtr bi = bias ? bias->impl() : nullptr;
    record([xi = x.impl(), wi = w.impl(), bi, yi = y.impl(), rows, in, out_dim] {
      if (yi->grad.empty()) return;
      const auto& G = yi->grad;
      if (xi->requires_grad) {
        auto& gx = xi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < in; ++i) {
            const double* wr = wi->data.data() + i * out_dim;
            const double* gr = G.data() + r * out_dim;
            double acc = 0.0;
            for (std::size_t o = 0; o < out_dim; ++o) acc += gr[o] * wr[o];
            gx[r * in + i] += acc;
          }
      }
      if (wi->requires_grad) {
        auto& gw = wi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = G.data() + r * out_dim;
          for (std::size_t i = 0; i < in; ++i) {
            const double xv = xi->data[r * in + i];
            if (xv == 0.0) continue;
            double* gwr = gw.data() + i * out_dim;
            for (std::size_t o = 0; o < out_dim; ++o) gwr[o] += xv * gr[o];
          }
        }
      }
      if (bi && bi->requires_grad) {
        auto& gb = bi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < out_dim; ++o) gb[o] += G[r * out_dim + o];
      }
    });
  }
  return y;
}

}  // namespace detail

/// x[..., in] * w[in, out] (+ bias[out]) applied over every leading index.
inline Tensor linear(const Tensor& x, const Tensor& w) { return detail::linear_impl(x, w, nullptr); }
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) { return detail::linear_impl(x, w, &bias); }

/// Normalises over the last axis, then applies gamma * xhat + beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  if (x.rank() == 0 || x.shape().back() == 0) throw ShapeError("layer_norm: zero-length last dimension");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gamma/beta " + to_string(gamma.shape()) + "/" + to_string(beta.shape()) +
                     " do not match last dimension of " + to_string(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  const auto X = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * inv_std[r];
      out[r * d + j] = gamma[j] * xhat[r * d + j] + beta[j];
    }
  }
  const bool tracked = detail::needs_grad(x, gamma, beta);
  Tensor y = detail::make_result(x.shape(), std::move(out), tracked);
  detail::check_finite(y, "layer_norm");
  if (tracked) {
    detail::record([xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), yi = y.impl(), xhat = std::move(xhat),
                    inv_std = std::move(inv_std), rows, d] {
      if (yi->grad.empty()) return;
      const auto& G = yi->grad;
      if (gi->requires_grad || bi->requires_grad) {
        auto& gg = gi->ensure_grad();
        auto& gb = bi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) {
            gg[j] += G[r * d + j] * xhat[r * d + j];
            gb[j] += G[r * d + j];
          }
      }
      if (xi->requires_grad) {
        auto& gx = xi->ensure_grad();
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = G[r * d + j] * gi->data[j];
            mean_g += gh;
            mean_gx += gh * xhat[r * d + j];
          }
          mean_g *= inv_d;
          mean_gx *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = G[r * d + j] * gi->data[j];
            gx[r * d + j] += inv_std[r] * (gh - mean_g - xhat[r * d + j] * mean_gx);
          }
        }
      }
    });
  }
  return y;
}

namespace detail {

inline Tensor depthwise_conv2d_impl(const Tensor& x, const Tensor& kernel, const Tensor* bias) {
  if (x.rank() != 3 || kernel.rank() != 3 || kernel.dim(0) != kernel.dim(1) || kernel.dim(2) != x.dim(2)) {
    throw ShapeError("depthwise_conv2d: input " + to_string(x.shape()) + " incompatible with kernel " +
                     to_string(kernel.shape()));
  }
  const std::size_t k = kernel.dim(0);
  if (k % 2 == 0) throw ShapeError("depthwise_conv2d: kernel size must be odd, got " + std::to_string(k));
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (bias && bias->shape() != Shape{C}) throw ShapeError("depthwise_conv2d: bias must have shape [C]");
  const long pad = static_cast<long>(k / 2);
  std::vector<double> out(x.numel(), 0.0);
  const auto X = x.data();
  const auto K = kernel.data();
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      double* yr = out.data() + (i * W + j) * C;
      if (bias)
        for (std::size_t c = 0; c < C; ++c) yr[c] = (*bias)[c];
      for (std::size_t u = 0; u < k; ++u) {
        const long si = static_cast<long>(i + u) - pad;
        if (si < 0 || si >= static_cast<long>(H)) continue;
        for (std::size_t v = 0; v < k; ++v) {
          const long sj = static_cast<long>(j + v) - pad;
          if (sj < 0 || sj >= static_cast<long>(W)) continue;
          const double* xr = X.data() + (static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj)) * C;
          const double* kr = K.data() + (u * k + v) * C;
          for (std::size_t c = 0; c < C; ++c) yr[c] += xr[c] * kr[c];
        }
      }
    }
  const bool tracked = bias ? needs_grad(x, kernel, *bias) : needs_grad(x, kernel);
  Tensor y = make_result(x.shape(), std::move(out), tracked);
  check_finite(y, "depthwise_conv2d");
  if (tracked) {
    ImplPtr bi = bias ? bias->impl() : nullptr;
    record([xi = x.impl(), ki = kernel.impl(), bi, yi = y.impl(), H, W, C, k, pad] {
      if (yi->grad.empty()) return;
      const auto& G = yi->grad;
      std::vector<double>* gx = xi->requires_grad ? &xi->ensure_grad() : nullptr;
      std::vector<double>* gk = ki->requires_grad ? &ki->ensure_grad() : nullptr;
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const double* gr = G.data() + (i * W + j) * C;
          for (std::size_t u = 0; u < k; ++u) {
            const long si = static_cast<long>(i + u) - pad;
            if (si < 0 || si >= static_cast<long>(H)) continue;
            for (std::size_t v = 0; v < k; ++v) {
              const long sj = static_cast<long>(j + v) - pad;
              if (sj < 0 || sj >= static_cast<long>(W)) continue;
              const std::size_t xo = (static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj)) * C;
              const std::size_t ko = (u * k + v) * C;
              for (std::size_t c = 0; c < C; ++c) {
                if (gx) (*gx)[xo + c] += gr[c] * ki->data[ko + c];
                if (gk) (*gk)[ko + c] += gr[c] * xi->data[xo + c];
              }
            }
          }
        }
      if (bi && bi->requires_grad) {
        auto& gb = bi->ensure_grad();
        for (std::size_t p = 0; p < H * W; ++p)
          for (std::size_t c = 0; c < C; ++c) gb[c] += G[p * C + c];
      }
    });
  }
  return y;
}

}  // namespace detail

/// Per-channel k x k cross-correlation with zero "same" padding; x is [H,W,C], kernel [k,k,C].
inline Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel) {
  return detail::depthwise_conv2d_impl(x, kernel, nullptr);
}
inline Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  return detail::depthwise_conv2d_impl(x, kernel, &bias);
}

/// Inverted dropout. Evaluation mode (or p == 0) returns x itself.
inline Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = uniform01(rng) < p ? 0.0 : keep_scale;
    out[i] = x[i] * mask[i];
  }
  const bool tracked = detail::needs_grad(x);
  Tensor y = detail::make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    detail::record([xi = x.impl(), yi = y.impl(), mask = std::move(mask)] {
      if (yi->grad.empty() || !xi->requires_grad) return;
      auto& g = xi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i] * mask[i];
    });
  }
  return y;
}

/// Same data, new extents.
inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const bool tracked = detail::needs_grad(x);
  Tensor y = detail::make_result(std::move(shape), std::move(out), tracked);
  if (tracked) {
    detail::record([xi = x.impl(), yi = y.impl()] {
      if (yi->grad.empty() || !xi->requires_grad) return;
      auto& g = xi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i];
    });
  }
  return y;
}

/// out.flat[i] = x.flat[source[i]]. Covers permutations, slicing and rearrangements; backward scatter-adds.
inline Tensor gather(const Tensor& x, std::vector<std::size_t> source, Shape shape) {
  if (numel(shape) != source.size()) {
    throw ShapeError("gather: " + std::to_string(source.size()) + " indices for shape " + to_string(shape));
  }
  std::vector<double> out(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source[i] >= x.numel()) throw ShapeError("gather: index out of range");
    out[i] = x[source[i]];
  }
  const bool tracked = detail::needs_grad(x);
  Tensor y = detail::make_result(std::move(shape), std::move(out), tracked);
  if (tracked) {
    detail::record([xi = x.impl(), yi = y.impl(), source = std::move(source)] {
      if (yi->grad.empty() || !xi->requires_grad) return;
      auto& g = xi->ensure_grad();
      for (std::size_t i = 0; i < source.size(); ++i) g[source[i]] += yi->grad[i];
    });
  }
  return y;
}

/// x[..., begin:begin+count] along the last axis.
inline Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t count) {
  if (x.rank() == 0 || begin + count > x.shape().back()) {
    throw ShapeError("slice_last: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + to_string(x.shape()));
  }
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  std::vector<std::size_t> source;
  source.reserve(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < count; ++j) source.push_back(r * d + begin + j);
  Shape shape = x.shape();
  shape.back() = count;
  return gather(x, std::move(source), std::move(shape));
}

/// Softmax over the last axis (max-shifted).
inline Tensor softmax_last(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) throw ShapeError("softmax_last: zero-length last dimension");
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.numel() / k;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double m = x[r * k];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, x[r * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += out[r * k + j] = std::exp(x[r * k + j] - m);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= z;
  }
  const bool tracked = detail::needs_grad(x);
  Tensor y = detail::make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    detail::record([xi = x.impl(), yi = y.impl(), rows, k] {
      if (yi->grad.empty() || !xi->requires_grad) return;
      auto& g = xi->ensure_grad();
      const auto& G = yi->grad;
      const auto& Y = yi->data;
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += G[r * k + j] * Y[r * k + j];
        for (std::size_t j = 0; j < k; ++j) g[r * k + j] += Y[r * k + j] * (G[r * k + j] - dot);
      }
    });
  }
  return y;
}

}  // namespace vmunet
