#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "VMUN"                      magic
//   u32 version                 currently 1
//   u32 n, n bytes              run configuration in canonical text form
//   u32 count                   tensor table, sorted by name
//     u32 n, n bytes            name
//     u32 rank, rank x u64      extents
//     f32 x numel               values
//   u8 has_optimizer
//     u64 step                  (if has_optimizer) then per tensor, in table order:
//     f32 x numel, f32 x numel  first and second moments
//   u64 FNV-1a of every preceding byte
//
// Values are computed in f64 and stored rounded to the nearest f32.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vmunet/config.hpp"
#include "vmunet/error.hpp"
#include "vmunet/layers.hpp"
#include "vmunet/netpbm.hpp"
#include "vmunet/network.hpp"
#include "vmunet/optim.hpp"
#include "vmunet/tensor.hpp"

namespace vmunet {

inline constexpr std::string_view kCheckpointMagic = "VMUN";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct OptimizerSnapshot {
  std::uint64_t step = 0;
  std::vector<std::vector<float>> first_moment;   // table order
  std::vector<std::vector<float>> second_moment;
};

struct Checkpoint {
  RunConfig config;
  std::vector<NamedTensor> tensors;  // sorted by name
  std::optional<OptimizerSnapshot> optimizer;
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { little(v); }
  void u64(std::uint64_t v) { little(v); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  std::string& str() { return out_; }

 private:
  template <class T>
  void little(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() { return little<std::uint32_t>(); }
  std::uint64_t u64() { return little<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes() {
    const std::uint32_t n = u32();
    return std::string(take(n));
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::string_view take(std::size_t n) {
    if (n > remaining()) throw DataError("checkpoint: truncated");
    std::string_view s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <class T>
  T little() {
    const std::string_view s = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.str().append(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.bytes(to_text(ckpt.config));
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    w.bytes(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.u64(d);
    for (float v : t.values) w.f32(v);
  }
  w.u8(ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    w.u64(ckpt.optimizer->step);
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
      for (float v : ckpt.optimizer->first_moment.at(i)) w.f32(v);
      for (float v : ckpt.optimizer->second_moment.at(i)) w.f32(v);
    }
  }
  w.u64(detail::fnv1a(w.str()));
  return std::move(w.str());
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 8 || bytes.substr(0, 4) != kCheckpointMagic) {
    throw DataError("checkpoint: bad magic");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  detail::ByteReader tail(bytes.substr(bytes.size() - 8));
  detail::ByteReader r(body.substr(4));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  if (tail.u64() != detail::fnv1a(body)) throw DataError("checkpoint: checksum mismatch");

  Checkpoint ckpt;
  try {
    ckpt.config = parse_config(r.bytes());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: bad config record: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw DataError("checkpoint: implausible rank for " + t.name);
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(static_cast<std::size_t>(r.u64()));
    const std::size_t n = numel(t.shape);
    if (n * 4 > r.remaining()) throw DataError("checkpoint: truncated payload for " + t.name);
    t.values.resize(n);
    for (float& v : t.values) v = r.f32();
    if (!ckpt.tensors.empty() && !(ckpt.tensors.back().name < t.name)) throw DataError("checkpoint: tensor table not sorted");
    ckpt.tensors.push_back(std::move(t));
  }
  if (r.u8()) {
    OptimizerSnapshot opt;
    opt.step = r.u64();
    for (const NamedTensor& t : ckpt.tensors) {
      std::vector<float> m(t.values.size()), v(t.values.size());
      for (float& e : m) e = r.f32();
      for (float& e : v) e = r.f32();
      opt.first_moment.push_back(std::move(m));
      opt.second_moment.push_back(std::move(v));
    }
    ckpt.optimizer = std::move(opt);
  }
  if (r.remaining() != 0) throw DataError("checkpoint: trailing bytes");
  return ckpt;
}

/// Snapshot of a network's parameters (and optionally optimizer moments, in `params` order).
inline Checkpoint make_checkpoint(const RunConfig& config, const ParamList& params, const OptimizerState* optimizer = nullptr) {
  std::vector<std::size_t> order(params.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return params[a].first < params[b].first; });
  Checkpoint ckpt;
  ckpt.config = config;
  auto to_f32 = [](std::span<const double> src) {
    std::vector<float> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<float>(src[i]);
    return out;
  };
  for (std::size_t i : order) ckpt.tensors.push_back({params[i].first, params[i].second.shape(), to_f32(params[i].second.data())});
  if (optimizer) {
    OptimizerSnapshot snap;
    snap.step = optimizer->step;
    for (std::size_t i : order) {
      snap.first_moment.push_back(to_f32(optimizer->first_moment.at(i)));
      snap.second_moment.push_back(to_f32(optimizer->second_moment.at(i)));
    }
    ckpt.optimizer = std::move(snap);
  }
  return ckpt;
}

/// Copies checkpoint values into `params`. Throws DataError naming the first tensor (by name) that is
/// missing, unexpected or shaped differently.
inline void load_into(const Checkpoint& ckpt, ParamList& params) {
  std::map<std::string, Tensor*> by_name;
  for (auto& [name, t] : params) by_name[name] = &t;
  std::map<std::string, const NamedTensor*> stored;
  for (const NamedTensor& t : ckpt.tensors) stored[t.name] = &t;
  auto a = by_name.begin();
  auto b = stored.begin();
  while (a != by_name.end() || b != stored.end()) {
    if (b == stored.end() || (a != by_name.end() && a->first < b->first)) throw DataError("checkpoint: missing tensor " + a->first);
    if (a == by_name.end() || b->first < a->first) throw DataError("checkpoint: unexpected tensor " + b->first);
    if (a->second->shape() != b->second->shape) {
      throw DataError("checkpoint: shape mismatch for " + a->first + ": stored " + to_string(b->second->shape) + ", network " +
                      to_string(a->second->shape()));
    }
    ++a;
    ++b;
  }
  for (auto& [name, t] : by_name) {
    const auto& src = stored[name]->values;
    auto dst = t->mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(src[i]);
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  netpbm::write_file(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(netpbm::read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace vmunet
