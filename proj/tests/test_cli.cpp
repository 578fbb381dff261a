// Drives the vmunet binary through the shell and checks exit codes and outputs.

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;  // stdout and stderr together
};

Outcome run(const std::string& args) {
  const std::string cmd = std::string("VMUNET_LOG=quiet ") + VMUNET_CLI + " " + args + " 2>&1";
  Outcome r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) { return vmunet::netpbm::read_file(p); }

class CliTest : public ::testing::Test {
 protected:
  static fs::path dir() { return fs::temp_directory_path() / ("vmunet_cli_test_" + std::to_string(getpid())); }
  static fs::path config() { return dir() / "tiny.cfg"; }

  // One short training run shared by the eval and infer tests.
  static void SetUpTestSuite() {
    fs::remove_all(dir());
    fs::create_directories(dir());
    std::ofstream(config()) << "base_channels = 4\nencoder_depths = 1,1,1,1\ndecoder_depths = 1,1,1,1\n"
                               "state_dim = 4\ninput_size = 32\nsynth_samples = 4\nbatch_size = 2\n"
                               "epochs = 2\nt_max = 2\n";
    trained_ = run("train --config " + config().string() + " --out " + (dir() / "run").string() + " --seed 5");
  }

  static void TearDownTestSuite() { fs::remove_all(dir()); }

  static inline Outcome trained_;
};

}  // namespace

TEST_F(CliTest, HelpExitsZero) {
  const Outcome r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"train", "eval", "infer", "verify", "info"}) EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  EXPECT_EQ(run("train --help").code, 0);
}

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("train --bogus 3 --out x").code, 1);
  EXPECT_EQ(run("train").code, 1);
  EXPECT_EQ(run("fly").code, 1);
}

TEST_F(CliTest, MissingConfigExitsTwoAndNamesPath) {
  const Outcome r = run("info --config /nonexistent/none.cfg");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("/nonexistent/none.cfg"), std::string::npos) << r.out;
}

TEST_F(CliTest, BadConfigValueExitsTwo) {
  const fs::path bad = dir() / "bad.cfg";
  std::ofstream(bad) << "epochs = 2\ninput_size = 100\n";
  const Outcome r = run("info --config " + bad.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("line 2"), std::string::npos) << r.out;
}

TEST_F(CliTest, TrainWritesArtifacts) {
  ASSERT_EQ(trained_.code, 0) << trained_.out;
  for (const char* f : {"best.ckpt", "last.ckpt", "metrics.log"}) EXPECT_TRUE(fs::exists(dir() / "run" / f)) << f;
  const std::string log = slurp(dir() / "run" / "metrics.log");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);
  EXPECT_EQ(log.rfind("epoch=1 step=2 lr=1.000000e-03 loss=", 0), 0u) << log;
  EXPECT_NE(log.find("epoch=2 step=4 lr="), std::string::npos);
}

TEST_F(CliTest, EvalPrintsMetricsDeterministically) {
  ASSERT_EQ(trained_.code, 0);
  const std::string args = "eval --checkpoint " + (dir() / "run" / "best.ckpt").string();
  const Outcome a = run(args), b = run(args);
  ASSERT_EQ(a.code, 0) << a.out;
  for (const char* key : {"miou=", "miou_2class=", "dsc=", "acc=", "spe=", "sen=", "hd95="})
    EXPECT_NE(a.out.find(key), std::string::npos) << key;
  EXPECT_EQ(a.out, b.out);
}

TEST_F(CliTest, InferWritesSameMaskTwice) {
  ASSERT_EQ(trained_.code, 0);
  const vmunet::Dataset d = vmunet::synth_dataset(1, 64, 1, 2);
  vmunet::netpbm::write_image(dir() / "img.ppm", d[0].image);
  const std::string base = "infer --checkpoint " + (dir() / "run" / "last.ckpt").string() + " --image " + (dir() / "img.ppm").string();
  ASSERT_EQ(run(base + " --out " + (dir() / "m1.pgm").string()).code, 0);
  ASSERT_EQ(run(base + " --out " + (dir() / "m2.pgm").string()).code, 0);
  EXPECT_EQ(slurp(dir() / "m1.pgm"), slurp(dir() / "m2.pgm"));
  const vmunet::LabelMap m = vmunet::netpbm::read_mask(dir() / "m1.pgm");
  EXPECT_EQ(m.height, 64u);
  for (auto v : m.labels) EXPECT_LE(v, 1);
}

TEST_F(CliTest, InferRejectsIndivisibleImage) {
  ASSERT_EQ(trained_.code, 0);
  vmunet::netpbm::write_image(dir() / "odd.ppm", vmunet::Tensor::zeros({40, 32, 3}));
  const Outcome r = run("infer --checkpoint " + (dir() / "run" / "best.ckpt").string() + " --image " + (dir() / "odd.ppm").string() +
                    " --out " + (dir() / "odd.pgm").string());
  EXPECT_EQ(r.code, 3) << r.out;
}

TEST_F(CliTest, CorruptCheckpointExitsThree) {
  ASSERT_EQ(trained_.code, 0);
  std::string bytes = slurp(dir() / "run" / "best.ckpt");
  bytes[bytes.size() / 2] ^= 1;
  vmunet::netpbm::write_file(dir() / "corrupt.ckpt", bytes);
  EXPECT_EQ(run("eval --checkpoint " + (dir() / "corrupt.ckpt").string()).code, 3);
}

TEST_F(CliTest, DirectoryDatasetAndBadData) {
  ASSERT_EQ(trained_.code, 0);
  vmunet::save_dataset(dir() / "data", vmunet::synth_dataset(2, 32, 1, 8));
  const std::string ckpt = (dir() / "run" / "best.ckpt").string();
  EXPECT_EQ(run("eval --checkpoint " + ckpt + " --data " + (dir() / "data").string()).code, 0);
  EXPECT_EQ(run("eval --checkpoint " + ckpt + " --data " + (dir() / "missing").string()).code, 3);
}

TEST_F(CliTest, VerifyPassesAndDetectsInjectedFault) {
  const Outcome ok = run("verify");
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);
  const Outcome bad = run("verify --inject-fault");
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.out.find("FAIL zoh_discretization"), std::string::npos) << bad.out;
}

TEST_F(CliTest, InfoPrintsParameterCount) {
  const Outcome r = run("info");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("params=" + std::to_string(vmunet::count_params(vmunet::NetworkConfig{}))), std::string::npos);
  EXPECT_NE(r.out.find("assume.state_dim=16"), std::string::npos);
  const Outcome toy = run("info --config " + std::string(VMUNET_SOURCE_DIR) + "/configs/toy.cfg");
  EXPECT_EQ(toy.code, 0) << toy.out;
  EXPECT_NE(toy.out.find("base_channels=8"), std::string::npos);
}
