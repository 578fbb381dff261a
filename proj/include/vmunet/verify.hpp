#pragma once

// Self-check suite behind `vmunet verify`. Each check compares library code against an
// independent evaluation and reports the worst discrepancy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "vmunet/gradcheck.hpp"
#include "vmunet/losses.hpp"
#include "vmunet/metrics.hpp"
#include "vmunet/random.hpp"
#include "vmunet/ss2d.hpp"
#include "vmunet/ssm.hpp"
#include "vmunet/vss.hpp"

namespace vmunet::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::vector<double> v(numel(shape));
  for (double& e : v) e = uniform(rng, lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

}  // namespace detail

/// discretize_zoh against a long double evaluation for |delta * a| spanning [1e-12, 10].
inline CheckResult check_zoh() {
  Rng rng = derive_stream(1, "verify/zoh");
  double worst = 0.0;
  for (int i = 0; i <= 260; ++i) {
    const double mag = std::pow(10.0, -12.0 + 13.0 * i / 260.0);
    for (double sign : {-1.0, 1.0}) {
      const double delta = uniform(rng, 0.05, 2.0);
      const double a = sign * std::min(mag, 10.0) / delta;
      const double b = uniform(rng, 0.5, 2.0);
      const auto out = ssm::discretize_zoh(Tensor({1, 1}, {a}), Tensor({1}, {b}), Tensor({1, 1}, {delta}));
      const long double z = static_cast<long double>(delta) * a;
      const long double a_ref = std::exp(z);
      const long double b_ref = static_cast<long double>(delta) * (std::expm1(z) / z) * b;
      worst = std::max(worst, static_cast<double>(std::fabs((out.a_bar[0] - a_ref) / a_ref)));
      worst = std::max(worst, static_cast<double>(std::fabs((out.b_bar[0] - b_ref) / b_ref)));
    }
  }
  return {"zoh_discretization", worst <= 1e-9, "max rel err " + detail::sci(worst)};
}

/// Time-invariant scan equals the causal convolution with its structured kernel.
inline CheckResult check_scan_duality(std::size_t cases = 300) {
  Rng rng = derive_stream(2, "verify/duality");
  double worst = 0.0;
  for (std::size_t k = 0; k < cases; ++k) {
    const std::size_t L = 1 + uniform_index(rng, 64), D = 1 + uniform_index(rng, 3), N = 1 + uniform_index(rng, 4);
    const Tensor x = detail::random_tensor({L, D}, rng);
    const Tensor a = detail::random_tensor({D, N}, rng, -3.0, -0.01);
    const Tensor d_skip = detail::random_tensor({D}, rng);
    std::vector<double> dt(D), bv(N), cv(N);
    for (double& e : dt) e = uniform(rng, 0.01, 1.0);
    for (double& e : bv) e = uniform(rng, -1.0, 1.0);
    for (double& e : cv) e = uniform(rng, -1.0, 1.0);
    std::vector<double> delta(L * D), b(L * N), c(L * N);
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t d = 0; d < D; ++d) delta[t * D + d] = dt[d];
      for (std::size_t n = 0; n < N; ++n) b[t * N + n] = bv[n], c[t * N + n] = cv[n];
    }
    const Tensor y = ssm::selective_scan(x, Tensor({L, D}, delta), a, Tensor({L, N}, b), Tensor({L, N}, c), d_skip);
    for (std::size_t d = 0; d < D; ++d) {
      std::vector<double> xs(L), ref(L);
      for (std::size_t t = 0; t < L; ++t) xs[t] = x[t * D + d], ref[t] = d_skip[d] * xs[t];
      for (std::size_t n = 0; n < N; ++n) {
        const auto zs = ssm::zoh(dt[d], a[d * N + n], bv[n]);
        const auto conv = ssm::lti_conv_oracle(xs, zs.a_bar, zs.b_bar, cv[n]);
        for (std::size_t t = 0; t < L; ++t) ref[t] += conv[t];
      }
      for (std::size_t t = 0; t < L; ++t) worst = std::max(worst, std::abs(y[t * D + d] - ref[t]));
    }
  }
  return {"scan_convolution_duality", worst <= 1e-9, std::to_string(cases) + " cases, max abs diff " + detail::sci(worst)};
}

inline CheckResult check_merge_expand(std::size_t cases = 100) {
  Rng rng = derive_stream(3, "verify/merge");
  for (std::size_t k = 0; k < cases; ++k) {
    const std::size_t H = 1 + uniform_index(rng, 16), W = 1 + uniform_index(rng, 16), D = 1 + uniform_index(rng, 8);
    const Tensor x = detail::random_tensor({H, W, D}, rng);
    const auto seqs = ss2d::scan_expand(x);
    for (const auto& map : seqs.index_maps) {
      std::vector<std::size_t> sorted = map;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < sorted.size(); ++i)
        if (sorted[i] != i) return {"merge_expand_roundtrip", false, "index map is not a permutation"};
    }
    const Tensor y = ss2d::scan_merge(seqs.sequences, seqs.index_maps, H, W);
    for (std::size_t i = 0; i < x.numel(); ++i)
      if (y[i] != 4.0 * x[i]) {
        return {"merge_expand_roundtrip", false, "mismatch at " + to_string({H, W, D}) + " element " + std::to_string(i)};
      }
  }
  return {"merge_expand_roundtrip", true, std::to_string(cases) + " shapes exact"};
}

inline CheckResult check_gradients() {
  Rng rng = derive_stream(4, "verify/grad");
  GradCheckOptions opt;
  opt.max_entries = 12;
  double worst = 0.0;
  std::string where;
  auto note = [&](const std::string& what, const GradCheckResult& r) {
    if (r.max_rel_error >= worst) worst = r.max_rel_error, where = what + ":" + r.worst;
  };

  {
    ssm::SsmParams p = ssm::init_ssm_params(4, 3, 1, rng);
    Tensor x = detail::random_tensor({6, 4}, rng, -1.0, 1.0, true);
    note("s6", grad_check([&] { return sum(ssm::s6_scan(x, p)); },
                          {{"x", x}, {"a", p.a}, {"d", p.d_skip}, {"wdd", p.w_delta_down}, {"wdu", p.w_delta_up},
                           {"bd", p.b_delta}, {"wb", p.w_b}, {"wc", p.w_c}},
                          opt));
  }
  {
    Ss2dModule m(3, 2, 1, false, rng);
    Tensor x = detail::random_tensor({3, 2, 3}, rng, -1.0, 1.0, true);
    ParamList ps;
    m.collect("ss2d", ps);
    ps.emplace_back("x", x);
    note("ss2d", grad_check([&] { return sum(m(x)); }, ps, opt));
  }
  {
    Tensor logits = detail::random_tensor({4, 4, 1}, rng, -2.0, 2.0, true);
    LabelMap target(4, 4);
    for (auto& v : target.labels) v = static_cast<std::uint8_t>(uniform_index(rng, 2));
    note("bcedice", grad_check([&] { return bcedice(logits, target); }, {{"logits", logits}}, opt));
    Tensor multi = detail::random_tensor({4, 4, 3}, rng, -2.0, 2.0, true);
    for (auto& v : target.labels) v = static_cast<std::uint8_t>(uniform_index(rng, 3));
    note("cedice", grad_check([&] { return cedice(multi, target); }, {{"logits", multi}}, opt));
  }
  return {"gradient_checks", worst <= 1e-4, "max rel err " + detail::sci(worst) + " at " + where};
}

/// hd95 against the all-pairs definition on random masks.
inline CheckResult check_hd95(std::size_t cases = 60) {
  Rng rng = derive_stream(5, "verify/hd95");
  for (std::size_t k = 0; k < cases; ++k) {
    const std::size_t H = 1 + uniform_index(rng, 20), W = 1 + uniform_index(rng, 20);
    const double density_a = uniform01(rng), density_b = uniform01(rng);
    std::vector<bool> a(H * W), b(H * W);
    for (std::size_t i = 0; i < H * W; ++i) a[i] = uniform01(rng) < density_a, b[i] = uniform01(rng) < density_b;
    const auto ba = boundary_pixels(a, H, W), bb = boundary_pixels(b, H, W);
    double expect = 0.0;
    if (ba.empty() != bb.empty()) {
      expect = std::numeric_limits<double>::infinity();
    } else if (!ba.empty()) {
      std::vector<double> d;
      auto directed = [&](const std::vector<std::size_t>& from, const std::vector<std::size_t>& to) {
        for (std::size_t p : from) {
          double best = std::numeric_limits<double>::infinity();
          for (std::size_t q : to) {
            const double dr = double(p / W) - double(q / W), dc = double(p % W) - double(q % W);
            best = std::min(best, std::sqrt(dr * dr + dc * dc));
          }
          d.push_back(best);
        }
      };
      directed(ba, bb);
      directed(bb, ba);
      expect = percentile(d, 0.95);
    }
    const double got = hd95(a, b, H, W);
    if (got != expect) return {"hd95_bruteforce", false, "case " + std::to_string(k) + ": " + detail::sci(got) + " vs " + detail::sci(expect)};
  }
  return {"hd95_bruteforce", true, std::to_string(cases) + " random mask pairs exact"};
}

inline std::vector<CheckResult> run_all() {
  return {check_zoh(), check_scan_duality(), check_merge_expand(), check_gradients(), check_hd95()};
}

}  // namespace vmunet::verify
