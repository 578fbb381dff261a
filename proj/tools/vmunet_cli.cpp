// vmunet: train, evaluate, run and self-check the segmentation network.
//
// Exit codes: 0 ok, 1 usage, 2 config, 3 data, 4 numeric / failed verification.
// VMUNET_LOG=quiet|info|debug controls how much goes to the terminal (default info).

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vmunet.hpp"

namespace fs = std::filesystem;
using namespace vmunet;

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kNumeric = 4 };

enum class Verbosity { Quiet, Info, Debug };

Verbosity verbosity() {
  const char* env = std::getenv("VMUNET_LOG");
  const std::string v = env ? env : "";
  if (v == "quiet") return Verbosity::Quiet;
  if (v == "debug") return Verbosity::Debug;
  return Verbosity::Info;
}

void debug(const std::string& msg) {
  if (verbosity() == Verbosity::Debug) std::cerr << "[debug] " << msg << "\n";
}

RunConfig load_config(const std::optional<std::string>& path) {
  if (!path) return {};
  if (!fs::is_regular_file(*path)) throw ConfigError("cannot read config file '" + *path + "'");
  try {
    return parse_config(netpbm::read_file(*path));
  } catch (const ConfigError& e) {
    throw ConfigError(*path + ": " + e.what());
  } catch (const DataError&) {
    throw ConfigError("cannot read config file '" + *path + "'");
  }
}

struct Data {
  Dataset train;
  Dataset eval;  // empty: evaluate on train
};

// "synth" or a directory with images/ + masks/ (and optionally val/images + val/masks).
Data load_data(const std::string& source, const RunConfig& cfg) {
  const NetworkConfig& net = cfg.network;
  if (source == "synth") {
    if (net.input_height != net.input_width) throw ConfigError("synthetic data needs a square input_size");
    Data d;
    d.train = synth_dataset(cfg.train.synth_samples, net.input_height, net.num_classes, cfg.train.seed);
    if (cfg.train.synth_val_samples > 0) {
      d.eval = synth_dataset(cfg.train.synth_val_samples, net.input_height, net.num_classes, splitmix64(cfg.train.seed));
    }
    return d;
  }
  Data d;
  d.train = load_dataset(source);
  if (fs::is_directory(fs::path(source) / "val")) d.eval = load_dataset(fs::path(source) / "val");
  return d;
}

VmUnet network_from(const Checkpoint& ckpt) {
  VmUnet net(ckpt.config.network, ckpt.config.train.seed);
  ParamList params = net.parameters();
  try {
    load_into(ckpt, params);
  } catch (const DataError& e) {
    throw ConfigError(std::string("incompatible checkpoint: ") + e.what());
  }
  return net;
}

int run_train(const std::optional<std::string>& config_path, const std::string& data, const std::string& out,
              const std::optional<std::uint64_t>& seed) {
  RunConfig cfg = load_config(config_path);
  if (seed) cfg.train.seed = *seed;
  const Data d = load_data(data, cfg);
  VmUnet net(cfg.network, cfg.train.seed);
  debug("parameters: " + std::to_string(count_params(cfg.network)) + ", training samples: " + std::to_string(d.train.size()));
  TrainOutputs io;
  io.out_dir = out;
  if (verbosity() != Verbosity::Quiet) io.log = [](const std::string& line) { std::cout << line << std::endl; };
  const auto start = std::chrono::steady_clock::now();
  const TrainResult r = train(net, cfg, d.train, d.eval, io);
  debug("finished " + std::to_string(r.steps) + " steps in " +
        std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()) + " s");
  if (verbosity() != Verbosity::Quiet) {
    std::cerr << "best dsc " << r.best_dsc << " at epoch " << r.best_epoch << ", checkpoints in " << out << "\n";
  }
  return kOk;
}

int run_eval(const std::string& checkpoint, const std::string& data, const std::optional<std::uint64_t>& seed) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const VmUnet net = network_from(ckpt);
  RunConfig cfg = ckpt.config;
  if (seed) cfg.train.seed = *seed;
  const Data d = load_data(data, cfg);
  std::cout << format_metrics(evaluate(net, d.train)) << "\n";
  return kOk;
}

int run_infer(const std::string& checkpoint, const std::string& image_path, const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const VmUnet net = network_from(ckpt);
  const Tensor image = netpbm::read_image(image_path);
  Tensor logits;
  try {
    logits = net.forward(image, Mode::Eval);
  } catch (const ShapeError& e) {
    throw DataError(image_path + ": " + e.what());
  }
  netpbm::write_mask(out, predict_labels(logits));
  return kOk;
}

int run_verify(bool inject_fault) {
  ssm::testing::flip_bbar_sign = inject_fault;
  bool ok = true;
  for (const auto& r : verify::run_all()) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    ok = ok && r.passed;
  }
  ssm::testing::flip_bbar_sign = false;
  return ok ? kOk : kNumeric;
}

int run_info(const std::optional<std::string>& config_path) {
  const RunConfig cfg = load_config(config_path);
  const NetworkConfig& n = cfg.network;
  auto list = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  std::cout << "params=" << count_params(n) << "\n"
            << "base_channels=" << n.base_channels << "\n"
            << "encoder_depths=" << list(n.encoder_depths) << "\n"
            << "decoder_depths=" << list(n.decoder_depths) << "\n"
            << "num_classes=" << n.num_classes << "\n"
            << "assume.state_dim=" << n.state_dim << "\n"
            << "assume.ssm_expand_ratio=" << n.ssm_expand_ratio << "\n"
            << "assume.dw_kernel=" << n.dw_kernel << "\n"
            << "assume.delta_rank=max(1,ceil(channels/16))\n"
            << "assume.ss2d_projections=" << (n.share_projections ? "shared" : "per_direction") << "\n"
            << "assume.a_init=-(n+1) stored as log(-a), d_skip_init=1\n"
            << "assume.in_projection=two linears without bias (gate, main)\n"
            << "assume.out_norm=layernorm after ss2d\n"
            << "assume.patch_merge=layernorm(4C) then linear 4C->2C without bias\n"
            << "assume.patch_expand=linear C->2C without bias, depth_to_space, layernorm(C/2)\n"
            << "assume.final_expand=linear C->16C without bias, depth_to_space(4), layernorm(C)\n"
            << "assume.head=linear C->K with bias\n"
            << "assume.layernorm_eps=1e-5\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"State-space U-Net segmentation: training, evaluation, inference and self-checks"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::string data = "synth", out, checkpoint, image;
  std::optional<std::uint64_t> seed;
  bool inject_fault = false;

  auto* train_cmd = app.add_subcommand("train", "Train a network and write checkpoints plus metrics.log");
  train_cmd->add_option("--config", config_path, "Configuration file (key = value lines)");
  train_cmd->add_option("--data", data, "Dataset directory or 'synth'")->capture_default_str();
  train_cmd->add_option("--out", out, "Output directory")->required();
  train_cmd->add_option("--seed", seed, "Master seed (overrides the config)");

  auto* eval_cmd = app.add_subcommand("eval", "Print one metrics record for a dataset");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data, "Dataset directory or 'synth'")->capture_default_str();
  eval_cmd->add_option("--seed", seed, "Seed for synthetic data (defaults to the checkpoint's)");

  auto* infer_cmd = app.add_subcommand("infer", "Predict a mask for one image");
  infer_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  infer_cmd->add_option("--image", image, "Input PPM image")->required();
  infer_cmd->add_option("--out", out, "Output PGM mask")->required();

  auto* verify_cmd = app.add_subcommand("verify", "Run the numerical self-checks");
  verify_cmd->add_flag("--inject-fault", inject_fault, "Flip the sign of the discretised input matrix (must fail)");

  auto* info_cmd = app.add_subcommand("info", "Print the parameter count and architectural assumptions");
  info_cmd->add_option("--config", config_path, "Configuration file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*train_cmd) return run_train(config_path, data, out, seed);
    if (*eval_cmd) return run_eval(checkpoint, data, seed);
    if (*infer_cmd) return run_infer(checkpoint, image, out);
    if (*verify_cmd) return run_verify(inject_fault);
    if (*info_cmd) return run_info(config_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
