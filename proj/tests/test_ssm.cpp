#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>

#include "test_util.hpp"

using namespace vmunet;
using namespace vmunet::ssm;
using testutil::rand_tensor;
using big = boost::multiprecision::cpp_bin_float_50;

namespace {

// (A_bar, B_bar) evaluated with 50 significant digits.
std::pair<double, double> zoh_reference(double delta, double a, double b) {
  const big z = big(delta) * big(a);
  const big e = boost::multiprecision::exp(z);
  return {static_cast<double>(e), static_cast<double>((e - 1) / z * big(delta) * big(b))};
}

Tensor constant_rows(std::size_t rows, const std::vector<double>& row) {
  std::vector<double> v;
  for (std::size_t r = 0; r < rows; ++r) v.insert(v.end(), row.begin(), row.end());
  return Tensor({rows, row.size()}, v);
}

}  // namespace

TEST(Zoh, HalfLifeCase) {
  const auto d = discretize_zoh(Tensor({1, 1}, {-1.0}), Tensor({1}, {1.0}), Tensor({1, 1}, {std::log(2.0)}));
  EXPECT_NEAR(d.a_bar[0], 0.5, 1e-15);
  EXPECT_NEAR(d.b_bar[0], 0.5, 1e-15);
}

TEST(Zoh, SmallStepLimit) {
  const double delta = 1e-10;
  const auto d = discretize_zoh(Tensor({1, 1}, {-3.0}), Tensor({1}, {2.0}), Tensor({1, 1}, {delta}));
  EXPECT_NEAR(d.a_bar[0], 1.0, 1e-9);
  EXPECT_NEAR(d.b_bar[0] / (delta * 2.0), 1.0, 1e-9);
}

TEST(Zoh, TinyStepMatchesExtendedPrecision) {
  const auto d = discretize_zoh(Tensor({1, 1}, {-1.0}), Tensor({1}, {1.0}), Tensor({1, 1}, {1e-12}));
  const auto [a_ref, b_ref] = zoh_reference(1e-12, -1.0, 1.0);
  EXPECT_LE(std::abs(d.a_bar[0] - a_ref) / a_ref, 1e-9);
  EXPECT_LE(std::abs(d.b_bar[0] - b_ref) / b_ref, 1e-9);
}

TEST(Zoh, BranchesAgreeInOverlapWindow) {
  for (double mag = 1e-9; mag <= 1e-6; mag *= 1.7) {
    for (double z : {mag, -mag}) {
      const double series = 1.0 + z * (0.5 + z / 6.0);
      const double exact = std::expm1(z) / z;
      EXPECT_LE(std::abs(series - exact) / exact, 1e-9) << z;
      EXPECT_LE(std::abs(zoh_gain(z) - exact) / exact, 1e-9) << z;
    }
  }
}

TEST(Zoh, BroadcastsAndValidates) {
  Rng rng(1);
  const Tensor a = rand_tensor({3, 2}, rng, -2, -0.1, false);
  const Tensor delta = rand_tensor({4, 3}, rng, 0.01, 1, false);
  const auto shared = discretize_zoh(a, Tensor({2}, {0.5, -1}), delta);
  EXPECT_EQ(shared.a_bar.shape(), (Shape{4, 3, 2}));
  const auto per_step = discretize_zoh(a, rand_tensor({4, 2}, rng, -1, 1, false), delta);
  EXPECT_EQ(per_step.b_bar.shape(), (Shape{4, 3, 2}));
  EXPECT_THROW(discretize_zoh(a, Tensor({3}, {1, 2, 3}), delta), ShapeError);
  EXPECT_THROW(discretize_zoh(a, Tensor({2}, {1, 2}), Tensor({1, 3}, {0.1, 0.0, 0.2})), std::domain_error);
  EXPECT_THROW(discretize_zoh(a, Tensor({2}, {1, 2}), Tensor({1, 3}, {0.1, -1.0, 0.2})), std::domain_error);
}

TEST(SelectiveScan, HandRecurrence) {
  // a = -1, delta = ln 2 gives A_bar = 0.5 and B_bar = 0.5 b, so b = 2 makes B_bar = 1.
  const Tensor y = selective_scan(Tensor({3, 1}, {1, 1, 1}), Tensor::full({3, 1}, std::log(2.0)), Tensor({1, 1}, {-1.0}),
                                  Tensor::full({3, 1}, 2.0), Tensor::ones({3, 1}), Tensor::zeros({1}));
  EXPECT_NEAR(y[0], 1.0, 1e-15);
  EXPECT_NEAR(y[1], 1.5, 1e-15);
  EXPECT_NEAR(y[2], 1.75, 1e-15);
}

TEST(S6Scan, ZeroInputGivesZeroOutput) {
  Rng rng(2);
  const SsmParams p = init_ssm_params(4, 3, 1, rng);
  const Tensor y = s6_scan(Tensor::zeros({7, 4}), p);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(S6Scan, SingleStepUnrolls) {
  Rng rng(3);
  const SsmParams p = init_ssm_params(3, 2, 1, rng);
  const Tensor x = rand_tensor({1, 3}, rng, -1, 1, false);
  const Tensor y = s6_scan(x, p);
  const Projections proj = project(x, p);
  for (std::size_t d = 0; d < 3; ++d) {
    double expect = p.d_skip[d] * x[d];
    for (std::size_t n = 0; n < 2; ++n) expect += proj.c[n] * zoh(proj.delta[d], p.a[d * 2 + n], proj.b[n]).b_bar * x[d];
    EXPECT_NEAR(y[d], expect, 1e-14);
  }
}

TEST(S6Scan, DeltaIsPositive) {
  Rng rng(4);
  const SsmParams p = init_ssm_params(5, 4, 1, rng);
  const Projections proj = project(rand_tensor({30, 5}, rng, -50, 50, false), p);
  for (double v : proj.delta.data()) EXPECT_GT(v, 0.0);
}

TEST(S6Scan, InitialisationConventions) {
  Rng rng(5);
  const SsmParams p = init_ssm_params(6, 4, delta_rank_for(6), rng);
  EXPECT_EQ(p.delta_rank(), 1u);
  EXPECT_EQ(delta_rank_for(96), 6u);
  EXPECT_EQ(delta_rank_for(97), 7u);
  for (std::size_t d = 0; d < 6; ++d) {
    EXPECT_EQ(p.d_skip[d], 1.0);
    for (std::size_t n = 0; n < 4; ++n) EXPECT_EQ(p.a[d * 4 + n], -double(n + 1));
    const double dt = detail::softplus_scalar(p.b_delta[d]);
    EXPECT_GE(dt, 1e-3 * (1 - 1e-12));
    EXPECT_LE(dt, 1e-1 * (1 + 1e-12));
  }
}

TEST(S6Scan, Causal) {
  Rng rng(6);
  const SsmParams p = init_ssm_params(3, 4, 1, rng);
  const Tensor x = rand_tensor({10, 3}, rng, -1, 1, false);
  const Tensor y = s6_scan(x, p);
  for (std::size_t t = 0; t < 10; ++t) {
    std::vector<double> v(x.data().begin(), x.data().end());
    v[t * 3 + 1] += 0.5;
    const Tensor yp = s6_scan(Tensor({10, 3}, v), p);
    for (std::size_t i = 0; i < t * 3; ++i) EXPECT_EQ(yp[i], y[i]);
  }
}

TEST(S6Scan, InitialStateContributes) {
  Rng rng(7);
  const SsmParams p = init_ssm_params(2, 2, 1, rng);
  const Tensor x = rand_tensor({3, 2}, rng, -1, 1, false);
  const Tensor without = s6_scan(x, p);
  const Tensor with = s6_scan(x, p, Tensor::ones({2, 2}));
  bool differs = false;
  for (std::size_t i = 0; i < x.numel(); ++i) differs = differs || with[i] != without[i];
  EXPECT_TRUE(differs);
  EXPECT_TRUE(testutil::bit_equal(s6_scan(x, p, Tensor::zeros({2, 2})), without));
}

TEST(LtiKernel, KnownKernel) {
  const auto k = lti_kernel(3, 0.5, 1.0, 1.0);
  EXPECT_EQ(k, (std::vector<double>{1.0, 0.5, 0.25}));
  const std::vector<double> x{1, 1, 1};
  EXPECT_EQ(lti_conv_oracle(x, 0.5, 1.0, 1.0), (std::vector<double>{1.0, 1.5, 1.75}));
}

TEST(LtiKernel, MemorylessCase) {
  const std::vector<double> x{2, -1, 3, 0.5};
  const auto y = lti_conv_oracle(x, 0.0, 1.5, 2.0);
  for (std::size_t t = 0; t < x.size(); ++t) EXPECT_EQ(y[t], 3.0 * x[t]);
}

TEST(LtiKernel, MatchesTimeInvariantScan) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t L = 1 + uniform_index(rng, 64);
    const double a = uniform(rng, -4, -0.01), dt = uniform(rng, 0.01, 1), b = uniform(rng, -1, 1), c = uniform(rng, -1, 1);
    const Tensor x = rand_tensor({L, 1}, rng, -1, 1, false);
    const Tensor y = selective_scan(x, Tensor::full({L, 1}, dt), Tensor({1, 1}, {a}), Tensor::full({L, 1}, b),
                                    Tensor::full({L, 1}, c), Tensor::zeros({1}));
    const auto z = zoh(dt, a, b);
    const auto ref = lti_conv_oracle(x.data(), z.a_bar, z.b_bar, c);
    for (std::size_t t = 0; t < L; ++t) EXPECT_NEAR(y[t], ref[t], 1e-12);
  }
}

TEST(SelectiveScan, LinearInInputWhenTimeInvariant) {
  Rng rng(9);
  const std::size_t L = 12, D = 2, N = 3;
  const Tensor a = rand_tensor({D, N}, rng, -2, -0.1, false);
  const Tensor dt = constant_rows(L, {0.3, 0.7}), b = constant_rows(L, {0.5, -1, 2}), c = constant_rows(L, {1, 0.2, -0.4});
  const Tensor ds = rand_tensor({D}, rng, -1, 1, false);
  const Tensor x = rand_tensor({L, D}, rng, -1, 1, false);
  const Tensor y = selective_scan(x, dt, a, b, c, ds);
  const Tensor y3 = selective_scan(scale(x, 3.0), dt, a, b, c, ds);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y3[i], 3.0 * y[i], 1e-12);
}

TEST(SelectiveScan, ShapeErrors) {
  const Tensor a = Tensor::full({2, 3}, -1.0);
  EXPECT_THROW(selective_scan(Tensor::zeros({0, 2}), Tensor::zeros({0, 2}), a, Tensor::zeros({0, 3}), Tensor::zeros({0, 3}),
                              Tensor::zeros({2})),
               ShapeError);
  EXPECT_THROW(selective_scan(Tensor::zeros({4, 2}), Tensor::ones({4, 2}), a, Tensor::zeros({4, 2}), Tensor::zeros({4, 3}),
                              Tensor::zeros({2})),
               ShapeError);
  Rng rng(10);
  EXPECT_THROW(s6_scan(Tensor::zeros({4, 5}), init_ssm_params(2, 3, 1, rng)), ShapeError);
}

TEST(S6Scan, GradientsMatchFiniteDifferences) {
  Rng rng(11);
  SsmParams p = init_ssm_params(4, 4, 2, rng);
  // larger steps than the initial delta range so every path carries signal
  for (double& v : p.b_delta.mutable_data()) v = uniform(rng, -1, 1);
  Tensor x = rand_tensor({8, 4}, rng);
  Tensor h0 = rand_tensor({4, 4}, rng);
  Tensor w = rand_tensor({8, 4}, rng, -1, 1, false);
  EXPECT_TRUE(testutil::grads_match([&] { return sum(mul(s6_scan(x, p, h0), w)); },
                                    {{"x", x}, {"h0", h0}, {"a", p.a}, {"d_skip", p.d_skip}, {"w_delta_down", p.w_delta_down},
                                     {"w_delta_up", p.w_delta_up}, {"b_delta", p.b_delta}, {"w_b", p.w_b}, {"w_c", p.w_c}}));
}

TEST(SelectiveScan, GradientsThroughSeriesWindow) {
  // delta * a around 1e-3 exercises the series branch of the gain derivative
  Rng rng(12);
  Tensor x = rand_tensor({5, 2}, rng), dt = rand_tensor({5, 2}, rng, 1e-4, 2e-3), a = rand_tensor({2, 3}, rng, -1, -0.5);
  Tensor b = rand_tensor({5, 3}, rng), c = rand_tensor({5, 3}, rng), ds = rand_tensor({2}, rng);
  const Tensor w = rand_tensor({5, 2}, rng, -1, 1, false);
  EXPECT_TRUE(testutil::grads_match([&] { return sum(mul(selective_scan(x, dt, a, b, c, ds), w)); },
                                    {{"x", x}, {"delta", dt}, {"a", a}, {"b", b}, {"c", c}, {"d", ds}}));
}
