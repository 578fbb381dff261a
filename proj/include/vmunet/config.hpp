#pragma once

// Run configuration: `key = value` lines, '#' starts a comment.
//
// Network keys:  base_channels, encoder_depths, decoder_depths, state_dim,
//                ssm_expand_ratio, dw_kernel, dropout_p, num_classes,
//                input_size (N or H,W), skip_connections, share_projections
// Training keys: epochs, batch_size, lr, lr_min, t_max, weight_decay, beta1,
//                beta2, adam_eps, lambda1..lambda4, eval_every, max_steps,
//                augment, seed, synth_samples, synth_val_samples
//
// Missing keys keep their defaults; unknown or repeated keys are rejected.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "vmunet/error.hpp"
#include "vmunet/losses.hpp"
#include "vmunet/network.hpp"
#include "vmunet/optim.hpp"

namespace vmunet {

struct TrainSettings {
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double lr_min = 1e-5;
  std::size_t t_max = 50;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossWeights loss_weights;
  std::size_t eval_every = 1;
  std::size_t max_steps = 0;  // 0: no cap
  bool augment = true;
  std::uint64_t seed = 0;
  std::size_t synth_samples = 16;
  std::size_t synth_val_samples = 0;  // 0: evaluate on the training samples

  bool operator==(const TrainSettings&) const = default;

  Schedule schedule() const { return {lr, lr_min, t_max}; }
  AdamWHyper adamw() const { return {beta1, beta2, adam_eps, weight_decay}; }

  void validate() const {
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (lr < 0.0 || lr_min < 0.0) throw ConfigError("learning rates must be non-negative");
    schedule().validate();
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    const LossWeights& w = loss_weights;
    if (w.bce < 0.0 || w.bce_dice < 0.0 || w.ce < 0.0 || w.ce_dice < 0.0) throw ConfigError("loss weights must be non-negative");
    if (eval_every == 0) throw ConfigError("eval_every must be >= 1");
    if (synth_samples == 0) throw ConfigError("synth_samples must be >= 1");
  }
};

struct RunConfig {
  NetworkConfig network;
  TrainSettings train;

  bool operator==(const RunConfig&) const = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_unsigned(const std::string& key, const std::string& value, std::size_t line) {
  T out{};
  const auto r = std::from_chars(value.data(), value.data() + value.size(), out);
  if (r.ec != std::errc{} || r.ptr != value.data() + value.size()) {
    throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + value + "'", line);
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& value, std::size_t line) {
  double out = 0.0;
  const auto r = std::from_chars(value.data(), value.data() + value.size(), out);
  if (r.ec != std::errc{} || r.ptr != value.data() + value.size()) {
    throw ConfigError("key '" + key + "' expects a number, got '" + value + "'", line);
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value, std::size_t line) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("key '" + key + "' expects true or false, got '" + value + "'", line);
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& value, std::size_t line) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_unsigned<std::size_t>(key, trim(item), line));
  if (out.empty()) throw ConfigError("key '" + key + "' expects a comma-separated list", line);
  return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value, std::size_t line)>;

inline const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
    auto size_key = [&t](const char* name, auto member) {
      t[name] = [member](RunConfig& c, const std::string& k, const std::string& v, std::size_t l) {
        member(c) = parse_unsigned<std::size_t>(k, v, l);
      };
    };
    auto double_key = [&t](const char* name, auto member) {
      t[name] = [member](RunConfig& c, const std::string& k, const std::string& v, std::size_t l) {
        member(c) = parse_double(k, v, l);
      };
    };
    auto bool_key = [&t](const char* name, auto member) {
      t[name] = [member](RunConfig& c, const std::string& k, const std::string& v, std::size_t l) {
        member(c) = parse_bool(k, v, l);
      };
    };
    size_key("base_channels", [](RunConfig& c) -> std::size_t& { return c.network.base_channels; });
    t["encoder_depths"] = [](RunConfig& c, const std::string& k, const std::string& v, std::size_t l) {
      c.network.encoder_depths = parse_list(k, v, l);
    };
    t["decoder_depths"] = [](RunConfig& c, const std::string& k, const std::string& v, std::size_t l) {
      c.network.decoder_depths = parse_list(k, v, l);
    };
    size_key("state_dim", [](RunConfig& c) -> std::size_t& { return c.network.state_dim; });
    size_key("ssm_expand_ratio", [](RunConfig& c) -> std::size_t& { return c.network.ssm_expand_ratio; });
    size_key("dw_kernel", [](RunConfig& c) -> std::size_t& { return c.network.dw_kernel; });
    double_key("dropout_p", [](RunConfig& c) -> double& { return c.network.dropout_p; });
    size_key("num_classes", [](RunConfig& c) -> std::size_t& { return c.network.num_classes; });
    t["input_size"] = [](RunConfig& c, const std::string& k, const std::string& v, std::size_t l) {
      const auto dims = parse_list(k, v, l);
      if (dims.size() > 2) throw ConfigError("key 'input_size' expects N or H,W", l);
      c.network.input_height = dims[0];
      c.network.input_width = dims.size() == 2 ? dims[1] : dims[0];
      if (c.network.input_height == 0 || c.network.input_width == 0 || c.network.input_height % kSpatialDivisor ||
          c.network.input_width % kSpatialDivisor) {
        throw ConfigError("input_size '" + v + "' must be a positive multiple of 32", l);
      }
    };
    bool_key("skip_connections", [](RunConfig& c) -> bool& { return c.network.skip_connections; });
    bool_key("share_projections", [](RunConfig& c) -> bool& { return c.network.share_projections; });

    size_key("epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; });
    size_key("batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    double_key("lr", [](RunConfig& c) -> double& { return c.train.lr; });
    double_key("lr_min", [](RunConfig& c) -> double& { return c.train.lr_min; });
    size_key("t_max", [](RunConfig& c) -> std::size_t& { return c.train.t_max; });
    double_key("weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
    double_key("beta1", [](RunConfig& c) -> double& { return c.train.beta1; });
    double_key("beta2", [](RunConfig& c) -> double& { return c.train.beta2; });
    double_key("adam_eps", [](RunConfig& c) -> double& { return c.train.adam_eps; });
    double_key("lambda1", [](RunConfig& c) -> double& { return c.train.loss_weights.bce; });
    double_key("lambda2", [](RunConfig& c) -> double& { return c.train.loss_weights.bce_dice; });
    double_key("lambda3", [](RunConfig& c) -> double& { return c.train.loss_weights.ce; });
    double_key("lambda4", [](RunConfig& c) -> double& { return c.train.loss_weights.ce_dice; });
    size_key("eval_every", [](RunConfig& c) -> std::size_t& { return c.train.eval_every; });
    size_key("max_steps", [](RunConfig& c) -> std::size_t& { return c.train.max_steps; });
    bool_key("augment", [](RunConfig& c) -> bool& { return c.train.augment; });
    t["seed"] = [](RunConfig& c, const std::string& k, const std::string& v, std::size_t l) {
      c.train.seed = parse_unsigned<std::uint64_t>(k, v, l);
    };
    size_key("synth_samples", [](RunConfig& c) -> std::size_t& { return c.train.synth_samples; });
    size_key("synth_val_samples", [](RunConfig& c) -> std::size_t& { return c.train.synth_val_samples; });
    return t;
  }();
  return table;
}

}  // namespace detail

/// Parses configuration text; throws ConfigError naming the key and line on the first problem.
inline RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view raw = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string line = detail::trim(raw);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value', got '" + line + "'", line_no);
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    const auto it = detail::setters().find(key);
    if (it == detail::setters().end()) throw ConfigError("unknown key '" + key + "'", line_no);
    if (!seen.insert(key).second) throw ConfigError("duplicate key '" + key + "'", line_no);
    if (value.empty()) throw ConfigError("key '" + key + "' has no value", line_no);
    it->second(cfg, key, value, line_no);
    if (end == text.size()) break;
  }
  cfg.network.validate();
  cfg.train.validate();
  return cfg;
}

/// Canonical text form; parse_config(to_text(c)) == c.
inline std::string to_text(const RunConfig& c) {
  const NetworkConfig& n = c.network;
  const TrainSettings& t = c.train;
  std::string out;
  auto put = [&out](const char* key, const std::string& value) { out += std::string(key) + " = " + value + "\n"; };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  put("base_channels", std::to_string(n.base_channels));
  put("encoder_depths", detail::join(n.encoder_depths));
  put("decoder_depths", detail::join(n.decoder_depths));
  put("state_dim", std::to_string(n.state_dim));
  put("ssm_expand_ratio", std::to_string(n.ssm_expand_ratio));
  put("dw_kernel", std::to_string(n.dw_kernel));
  put("dropout_p", detail::format_double(n.dropout_p));
  put("num_classes", std::to_string(n.num_classes));
  put("input_size", std::to_string(n.input_height) + "," + std::to_string(n.input_width));
  put("skip_connections", b(n.skip_connections));
  put("share_projections", b(n.share_projections));
  put("epochs", std::to_string(t.epochs));
  put("batch_size", std::to_string(t.batch_size));
  put("lr", detail::format_double(t.lr));
  put("lr_min", detail::format_double(t.lr_min));
  put("t_max", std::to_string(t.t_max));
  put("weight_decay", detail::format_double(t.weight_decay));
  put("beta1", detail::format_double(t.beta1));
  put("beta2", detail::format_double(t.beta2));
  put("adam_eps", detail::format_double(t.adam_eps));
  put("lambda1", detail::format_double(t.loss_weights.bce));
  put("lambda2", detail::format_double(t.loss_weights.bce_dice));
  put("lambda3", detail::format_double(t.loss_weights.ce));
  put("lambda4", detail::format_double(t.loss_weights.ce_dice));
  put("eval_every", std::to_string(t.eval_every));
  put("max_steps", std::to_string(t.max_steps));
  put("augment", b(t.augment));
  put("seed", std::to_string(t.seed));
  put("synth_samples", std::to_string(t.synth_samples));
  put("synth_val_samples", std::to_string(t.synth_val_samples));
  return out;
}

}  // namespace vmunet
