#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <set>

#include "test_util.hpp"

using namespace vmunet;
namespace fs = std::filesystem;
using testutil::rand_tensor;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vmunet_test_" + name + "_" + std::to_string(getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig toy_run() {
  RunConfig c;
  c.network.base_channels = 4;
  c.network.encoder_depths = {1, 1, 1, 1};
  c.network.decoder_depths = {1, 1, 1, 1};
  c.network.state_dim = 4;
  c.network.input_height = c.network.input_width = 32;
  c.train.seed = 3;
  return c;
}

}  // namespace

// Netpbm

TEST(Netpbm, ImageRoundTripWithinQuantisation) {
  Rng rng(1);
  const Tensor img = rand_tensor({5, 7, 3}, rng, 0, 1, false);
  const Tensor back = netpbm::decode_ppm(netpbm::encode_ppm(img));
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_LE(std::abs(back[i] - img[i]), 0.5 / 255.0 + 1e-12);
  // a second pass is exact
  EXPECT_EQ(netpbm::encode_ppm(back), netpbm::encode_ppm(img));
}

TEST(Netpbm, SingleWhitePixelBytes) {
  EXPECT_EQ(netpbm::encode_ppm(Tensor::full({1, 1, 3}, 1.0)), std::string("P6\n1 1\n255\n\xff\xff\xff"));
  EXPECT_EQ(netpbm::encode_ppm(Tensor::full({1, 2, 3}, 2.0)).substr(0, 9), "P6\n2 1\n25");
}

TEST(Netpbm, MaskRoundTripExact) {
  Rng rng(2);
  const LabelMap m = testutil::rand_labels(6, 9, 256, rng);
  EXPECT_EQ(netpbm::decode_pgm(netpbm::encode_pgm(m)), m);
}

TEST(Netpbm, HeaderCommentsAndWhitespace) {
  const Tensor img = netpbm::decode_ppm(std::string("P6 # comment\n 1\t1\n# more\n255\n\x00\x80\xff", 32));
  EXPECT_EQ(img.shape(), (Shape{1, 1, 3}));
  EXPECT_DOUBLE_EQ(img[1], 128.0 / 255.0);
}

TEST(Netpbm, MalformedInputs) {
  EXPECT_THROW(netpbm::decode_ppm("P5\n1 1\n255\n\x01"), DataError);
  EXPECT_THROW(netpbm::decode_ppm("P6\n2 2\n255\nabc"), DataError);
  EXPECT_THROW(netpbm::decode_ppm("P6\n1 1\n65535\n"), DataError);
  EXPECT_THROW(netpbm::decode_ppm("P6\n0 1\n255\n"), DataError);
  EXPECT_THROW(netpbm::decode_pgm("P5\nx 1\n255\n\x01"), DataError);
  EXPECT_THROW(netpbm::decode_pgm(""), DataError);
  EXPECT_THROW(netpbm::read_image("/nonexistent/path.ppm"), DataError);
}

// Checkpoint

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const RunConfig cfg = toy_run();
  VmUnet net(cfg.network, 1);
  ParamList params = net.parameters();
  OptimizerState opt = OptimizerState::for_params(params);
  opt.step = 17;
  opt.first_moment[0][0] = 0.25;
  const std::string bytes = encode_checkpoint(make_checkpoint(cfg, params, &opt));
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(back.config, cfg);
  ASSERT_TRUE(back.optimizer.has_value());
  EXPECT_EQ(back.optimizer->step, 17u);
  EXPECT_EQ(encode_checkpoint(back), bytes);

  const fs::path dir = scratch("ckpt");
  save_checkpoint(dir / "a.ckpt", back);
  EXPECT_EQ(netpbm::read_file(dir / "a.ckpt"), bytes);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(dir / "a.ckpt")), bytes);
}

TEST(Checkpoint, LoadRestoresNetwork) {
  const RunConfig cfg = toy_run();
  VmUnet a(cfg.network, 1), b(cfg.network, 2);
  ParamList pb = b.parameters();
  load_into(decode_checkpoint(encode_checkpoint(make_checkpoint(cfg, a.parameters()))), pb);
  Rng rng(3);
  const Tensor x = rand_tensor({32, 32, 3}, rng, 0, 1, false);
  // stored as f32, so outputs agree to single precision only
  const Tensor ya = a.forward(x), yb = b.forward(x);
  for (std::size_t i = 0; i < ya.numel(); ++i) EXPECT_NEAR(ya[i], yb[i], 1e-4);
}

TEST(Checkpoint, ValuesStoredAsSinglePrecision) {
  Tensor t({1}, {1.0 / 3.0}, true);
  const Checkpoint c = decode_checkpoint(encode_checkpoint(make_checkpoint(toy_run(), {{"w", t}})));
  ASSERT_EQ(c.tensors.size(), 1u);
  EXPECT_EQ(c.tensors[0].values[0], static_cast<float>(1.0 / 3.0));
  ParamList params{{"w", Tensor::zeros({1}, true)}};
  load_into(c, params);
  EXPECT_EQ(params[0].second[0], static_cast<double>(static_cast<float>(1.0 / 3.0)));
}

TEST(Checkpoint, EveryFlippedByteIsDetected) {
  Tensor t({2, 2}, {1, 2, 3, 4}, true);
  const std::string bytes = encode_checkpoint(make_checkpoint(toy_run(), {{"w", t}}));
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    std::string bad = bytes;
    bad[i] = static_cast<char>(bad[i] ^ 0x5a);
    EXPECT_THROW(decode_checkpoint(bad), DataError) << "byte " << i;
  }
}

TEST(Checkpoint, TruncationAndVersion) {
  Tensor t({3}, {1, 2, 3}, true);
  const std::string bytes = encode_checkpoint(make_checkpoint(toy_run(), {{"w", t}}));
  for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, n)), DataError);
  }
  std::string v2 = bytes;
  v2[4] = 2;
  try {
    decode_checkpoint(v2);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, MismatchedNetworkNamesTensor) {
  RunConfig big = toy_run();
  big.network.base_channels = 8;
  const Checkpoint c = make_checkpoint(big, VmUnet(big.network, 1).parameters());
  ParamList small = VmUnet(toy_run().network, 1).parameters();
  try {
    load_into(c, small);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("decoder.0.block0"), std::string::npos) << e.what();
  }
  ParamList missing = small;
  missing.pop_back();
  EXPECT_THROW(load_into(make_checkpoint(toy_run(), small), missing), DataError);
}

TEST(Checkpoint, MissingFileNamesPath) {
  try {
    load_checkpoint("/nonexistent/x.ckpt");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/x.ckpt"), std::string::npos);
  }
}

// Config

TEST(Config, EmptyTextGivesDefaults) {
  EXPECT_EQ(parse_config(""), RunConfig{});
  EXPECT_EQ(parse_config("# only a comment\n\n   \n"), RunConfig{});
}

TEST(Config, SingleOverride) {
  RunConfig want;
  want.network.base_channels = 48;
  EXPECT_EQ(parse_config("base_channels = 48\n"), want);
  want.network.input_height = 64;
  want.network.input_width = 96;
  EXPECT_EQ(parse_config("base_channels=48  # halved\ninput_size = 64,96"), want);
}

TEST(Config, RoundTrip) {
  RunConfig c = toy_run();
  c.train.lr = 3.3e-4;
  c.train.loss_weights.bce_dice = 0.1;
  c.train.augment = false;
  c.network.share_projections = true;
  EXPECT_EQ(parse_config(to_text(c)), c);
  EXPECT_EQ(to_text(parse_config(to_text(c))), to_text(c));
}

TEST(Config, ErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return e.line();
    }
    return std::size_t{999};
  };
  EXPECT_EQ(line_of("epochs = 3\ninput_size = 100\n"), 2u);
  EXPECT_EQ(line_of("colour = red"), 1u);
  EXPECT_EQ(line_of("seed = 1\n\nseed = 2"), 3u);
  EXPECT_EQ(line_of("epochs"), 1u);
  EXPECT_EQ(line_of("epochs = -1"), 1u);
  EXPECT_EQ(line_of("augment = maybe"), 1u);
  EXPECT_EQ(line_of("lr ="), 1u);
  EXPECT_THROW(parse_config("lr = 1e-5\nlr_min = 1e-3"), ConfigError);
}

// Synthetic data

TEST(Synth, Deterministic) {
  const Dataset a = synth_dataset(4, 32, 3, 9), b = synth_dataset(4, 32, 3, 9);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(testutil::bit_equal(a[i].image, b[i].image));
    EXPECT_EQ(a[i].mask, b[i].mask);
    EXPECT_EQ(a[i].id, "synth_" + std::to_string(i));
  }
  EXPECT_NE(synth_dataset(1, 32, 1, 10)[0].mask, a[0].mask);
  // a longer dataset extends a shorter one
  EXPECT_EQ(synth_dataset(6, 32, 3, 9)[3].mask, a[3].mask);
}

TEST(Synth, LabelsAndClassPresence) {
  for (std::size_t K : {1, 2, 5}) {
    const std::size_t limit = K == 1 ? 2 : K;
    for (const auto& s : synth_dataset(8, 32, K, 4)) {
      std::set<std::uint8_t> present(s.mask.labels.begin(), s.mask.labels.end());
      for (auto v : present) EXPECT_LT(v, limit);
      for (std::size_t c = 1; c < limit; ++c) EXPECT_TRUE(present.count(static_cast<std::uint8_t>(c))) << "class " << c;
      for (double v : s.image.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    }
  }
}

TEST(Synth, EllipseArea) {
  Rng rng(5);
  for (int k = 0; k < 30; ++k) {
    const double a = uniform(rng, 8, 20), b = uniform(rng, 8, 20);
    LabelMap m(64, 64);
    const std::size_t painted = render_ellipse(m, 32.0 + uniform(rng, -1, 1), 32.0 + uniform(rng, -1, 1), a, b, 1);
    const double area = std::numbers::pi * a * b;
    EXPECT_NEAR(double(painted) / area, 1.0, 0.05);
    EXPECT_EQ(painted, std::size_t(std::count(m.labels.begin(), m.labels.end(), 1)));
  }
}

TEST(Synth, RejectsBadSizes) {
  EXPECT_THROW(synth_dataset(1, 48, 1, 0), ConfigError);
  EXPECT_THROW(synth_dataset(1, 32, 0, 0), ConfigError);
}

TEST(Synth, DirectoryRoundTrip) {
  const fs::path dir = scratch("dataset");
  const Dataset data = synth_dataset(3, 32, 2, 1);
  save_dataset(dir, data);
  const Dataset back = load_dataset(dir);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].id, data[i].id);
    EXPECT_EQ(back[i].mask, data[i].mask);
    for (std::size_t j = 0; j < data[i].image.numel(); ++j) ASSERT_NEAR(back[i].image[j], data[i].image[j], 0.5 / 255 + 1e-12);
  }
  fs::remove(dir / "masks" / "synth_1.pgm");
  EXPECT_THROW(load_dataset(dir), DataError);
  EXPECT_THROW(load_dataset(dir / "nothing"), DataError);
}
