#include <algorithm>

#include "test_util.hpp"

using namespace vmunet;
using namespace vmunet::ss2d;
using testutil::rand_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::array<ssm::SsmParams, kDirections> random_params(std::size_t D, std::size_t N, Rng& rng) {
  std::array<ssm::SsmParams, kDirections> p;
  for (auto& e : p) e = ssm::init_ssm_params(D, N, 1, rng);
  return p;
}

// delta = softplus(800) = 800 with a = -1: A_bar = exp(-800) underflows to 0 and B_bar = b exactly.
ssm::SsmParams memoryless(std::size_t D) {
  ssm::SsmParams p;
  p.a = Tensor::full({D, 1}, -1.0);
  p.d_skip = Tensor::zeros({D});
  p.w_delta_down = Tensor::zeros({D, 1});
  p.w_delta_up = Tensor::zeros({1, D});
  p.b_delta = Tensor::full({D}, 800.0);
  p.w_b = Tensor::zeros({D, 1});
  p.w_c = Tensor::zeros({D, 1});
  return p;
}

}  // namespace

TEST(ScanExpand, TwoByTwoTraversals) {
  const auto s = scan_expand(Tensor({2, 2, 1}, {1, 2, 3, 4}));
  EXPECT_EQ(values(s.sequences[0]), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(values(s.sequences[1]), (std::vector<double>{1, 3, 2, 4}));
  EXPECT_EQ(values(s.sequences[2]), (std::vector<double>{4, 3, 2, 1}));
  EXPECT_EQ(values(s.sequences[3]), (std::vector<double>{4, 2, 3, 1}));
}

TEST(ScanExpand, SingletonGrid) {
  const auto s = scan_expand(Tensor({1, 1, 2}, {7, 8}));
  for (const auto& seq : s.sequences) EXPECT_EQ(values(seq), (std::vector<double>{7, 8}));
}

TEST(ScanExpand, SingleRow) {
  const auto s = scan_expand(Tensor({1, 4, 1}, {1, 2, 3, 4}));
  EXPECT_EQ(values(s.sequences[0]), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(values(s.sequences[1]), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(values(s.sequences[2]), (std::vector<double>{4, 3, 2, 1}));
  EXPECT_EQ(values(s.sequences[3]), (std::vector<double>{4, 3, 2, 1}));
}

TEST(ScanExpand, IndexMapsArePermutationsAndReversals) {
  for (auto [h, w] : {std::pair{1, 1}, {3, 5}, {6, 2}, {7, 7}}) {
    const auto maps = make_index_maps(h, w);
    for (const auto& m : maps) {
      std::vector<std::size_t> sorted = m;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < sorted.size(); ++i) ASSERT_EQ(sorted[i], i);
    }
    EXPECT_TRUE(std::equal(maps[2].begin(), maps[2].end(), maps[0].rbegin()));
    EXPECT_TRUE(std::equal(maps[3].begin(), maps[3].end(), maps[1].rbegin()));
  }
}

TEST(ScanExpand, RejectsEmptyGrid) { EXPECT_THROW(scan_expand(Tensor::zeros({0, 3, 1})), ShapeError); }

TEST(ScanMerge, RoundTripIsFourTimesInput) {
  Rng rng(1);
  for (int k = 0; k < 30; ++k) {
    const std::size_t H = 1 + uniform_index(rng, 9), W = 1 + uniform_index(rng, 9), D = 1 + uniform_index(rng, 4);
    const Tensor x = rand_tensor({H, W, D}, rng, -1, 1, false);
    const auto s = scan_expand(x);
    const Tensor y = scan_merge(s.sequences, s.index_maps, H, W);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(y[i], 4.0 * x[i]);
  }
}

TEST(ScanMerge, SingleBranchRecovery) {
  Rng rng(2);
  const Tensor x = rand_tensor({3, 4, 2}, rng, -1, 1, false);
  auto s = scan_expand(x);
  for (std::size_t keep = 0; keep < kDirections; ++keep) {
    std::array<Tensor, kDirections> seqs;
    for (std::size_t k = 0; k < kDirections; ++k) seqs[k] = k == keep ? s.sequences[k] : Tensor::zeros({12, 2});
    EXPECT_TRUE(testutil::bit_equal(scan_merge(seqs, s.index_maps, 3, 4), x));
  }
}

TEST(ScanMerge, LinearInBranchScales) {
  Rng rng(3);
  const Tensor x = rand_tensor({4, 3, 2}, rng, -1, 1, false);
  auto s = scan_expand(x);
  const std::array<double, 4> c{0.5, -2.0, 3.0, 1.25};
  std::array<Tensor, kDirections> seqs;
  for (std::size_t k = 0; k < kDirections; ++k) seqs[k] = scale(s.sequences[k], c[k]);
  const Tensor y = scan_merge(seqs, s.index_maps, 4, 3);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], (c[0] + c[1] + c[2] + c[3]) * x[i], 1e-14);
}

TEST(ScanMerge, LengthMismatch) {
  auto s = scan_expand(Tensor::zeros({2, 3, 1}));
  s.sequences[2] = Tensor::zeros({5, 1});
  EXPECT_THROW(scan_merge(s.sequences, s.index_maps, 2, 3), ShapeError);
}

TEST(Ss2d, ZeroInputZeroOutput) {
  Rng rng(4);
  const Tensor y = ss2d_forward(Tensor::zeros({3, 3, 2}), random_params(2, 3, rng));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Ss2d, MemorylessDirectionsGiveFourX) {
  // Channel 0 is held at 1 so that B_t = C_t = 1 through unit projection weights on it.
  Rng rng(5);
  std::vector<double> v(12 * 2);
  for (std::size_t i = 0; i < 12; ++i) v[i * 2] = 1.0, v[i * 2 + 1] = uniform(rng, -1, 1);
  const Tensor x({3, 4, 2}, v);
  std::array<ssm::SsmParams, kDirections> p;
  for (auto& e : p) {
    e = memoryless(2);
    e.w_b = Tensor({2, 1}, {1.0, 0.0});
    e.w_c = Tensor({2, 1}, {1.0, 0.0});
  }
  const Tensor y = ss2d_forward(x, p);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], 4.0 * x[i], 1e-12);
}

TEST(Ss2d, PreservesShape) {
  Rng rng(6);
  for (auto [h, w] : {std::pair{1, 1}, {2, 3}, {7, 5}}) {
    const Tensor x = rand_tensor({std::size_t(h), std::size_t(w), 3}, rng, -1, 1, false);
    EXPECT_EQ(ss2d_forward(x, random_params(3, 2, rng)).shape(), x.shape());
  }
}

TEST(Ss2d, DoubleFlipSwapsDirections) {
  Rng rng(7);
  const std::size_t H = 4, W = 5, D = 3;
  const Tensor x = rand_tensor({H, W, D}, rng, -1, 1, false);
  const auto p = random_params(D, 2, rng);
  // 180 degree rotation: (r, c) -> (H-1-r, W-1-c), which is the flat reversal of positions.
  auto rotate = [&](const Tensor& t) {
    std::vector<std::size_t> src;
    for (std::size_t pos = H * W; pos-- > 0;)
      for (std::size_t c = 0; c < D; ++c) src.push_back(pos * D + c);
    return gather(t, src, {H, W, D});
  };
  const auto swapped = std::array<ssm::SsmParams, kDirections>{p[2], p[3], p[0], p[1]};
  const Tensor lhs = ss2d_forward(rotate(x), swapped);
  const Tensor rhs = rotate(ss2d_forward(x, p));
  for (std::size_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);
}

TEST(Ss2d, GradientsMatchFiniteDifferences) {
  Rng rng(8);
  auto p = random_params(2, 2, rng);
  for (auto& e : p)
    for (double& v : e.b_delta.mutable_data()) v = uniform(rng, -1, 1);
  Tensor x = rand_tensor({4, 4, 2}, rng);
  const Tensor w = rand_tensor({4, 4, 2}, rng, -1, 1, false);
  std::vector<std::pair<std::string, Tensor>> inputs{{"x", x}};
  for (std::size_t k = 0; k < kDirections; ++k) {
    const std::string n = "dir" + std::to_string(k);
    inputs.insert(inputs.end(), {{n + ".a", p[k].a}, {n + ".d", p[k].d_skip}, {n + ".wdd", p[k].w_delta_down},
                                 {n + ".wdu", p[k].w_delta_up}, {n + ".bd", p[k].b_delta}, {n + ".wb", p[k].w_b},
                                 {n + ".wc", p[k].w_c}});
  }
  EXPECT_TRUE(testutil::grads_match([&] { return sum(mul(ss2d_forward(x, p), w)); }, inputs));
}
