#pragma once

// Checkpoint container. Layout (all integers little-endian):
//
//   "HLCK" u32 version
//   u8 precision (4 = float32, 8 = float64)
//   arch: u64 layers, hidden, embed, vocab; u8 attention mode
//         (0 none, 1 complex, 2 simple); u64 split, max_in, max_out;
//         f64 dropout, init_range
//   str run config (key=value lines)
//   vocabulary: u32 n, then n x (str token, u64 count)
//   u32 tensor count, then per tensor:
//         str name; u32 rank; u64 dims[rank]; u8 precision; raw values
//   u8 has_optimizer; if 1: f64 lr, decay, momentum, epsilon and the
//         cache.* and momentum.* tensors in the same tensor format
//   u64 epochs_completed, u64 global_step, str rng state,
//   u64 metric-log byte offset
//
// str = u32 byte length followed by the bytes.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "headline/binary_io.hpp"
#include "headline/corpus.hpp"
#include "headline/errors.hpp"
#include "headline/params.hpp"
#include "headline/training.hpp"

namespace headline {

inline constexpr char kCheckpointMagic[] = "HLCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingProgress {
  std::uint64_t epochs_completed = 0;
  std::uint64_t global_step = 0;
  std::string rng_state;
  std::uint64_t metric_log_offset = 0;

  friend bool operator==(const TrainingProgress&, const TrainingProgress&) = default;
};

template <class Real>
struct Checkpoint {
  ModelParams<Real> params;
  Vocabulary vocab;
  std::string config_text;
  std::optional<OptimizerState<Real>> optimizer;
  TrainingProgress progress;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

template <class Real>
constexpr std::uint8_t precision_code() {
  static_assert(std::is_same_v<Real, float> || std::is_same_v<Real, double>);
  return sizeof(Real);
}

namespace detail {

template <class Real>
void write_tensor(BinaryWriter& w, const std::string& name, const Tensor<Real>& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u64(d);
  w.u8(precision_code<Real>());
  for (Real v : t.values()) {
    if constexpr (std::is_same_v<Real, float>) {
      w.f32(v);
    } else {
      w.f64(v);
    }
  }
}

template <class Real>
void read_tensor_into(BinaryReader& r, const std::string& expected_name, Tensor<Real>& t) {
  const std::string name = r.str();
  if (name != expected_name) throw DataError("checkpoint: expected tensor " + expected_name + ", found " + name);
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw DataError("checkpoint: bad rank for " + name);
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
  if (shape != t.shape()) throw DataError("checkpoint: shape mismatch for " + name);
  const std::uint8_t code = r.u8();
  if (code != 4 && code != 8) throw DataError("checkpoint: bad precision for " + name);
  for (auto& v : t.values()) v = code == 4 ? static_cast<Real>(r.f32()) : static_cast<Real>(r.f64());
}

inline void write_arch(BinaryWriter& w, const Arch& a) {
  w.u64(a.num_layers);
  w.u64(a.hidden);
  w.u64(a.embed);
  w.u64(a.vocab);
  w.u8(static_cast<std::uint8_t>(a.attention_mode));
  w.u64(a.split_size);
  w.u64(a.max_in);
  w.u64(a.max_out);
  w.f64(a.dropout);
  w.f64(a.init_range);
}

inline Arch read_arch(BinaryReader& r) {
  Arch a;
  a.num_layers = r.u64();
  a.hidden = r.u64();
  a.embed = r.u64();
  a.vocab = r.u64();
  const std::uint8_t mode = r.u8();
  if (mode > 2) throw DataError("checkpoint: unknown attention mode");
  a.attention_mode = static_cast<AttentionMode>(mode);
  a.split_size = r.u64();
  a.max_in = r.u64();
  a.max_out = r.u64();
  a.dropout = r.f64();
  a.init_range = r.f64();
  try {
    a.validate();
  } catch (const ContractError& e) {
    throw DataError(std::string("checkpoint: invalid architecture: ") + e.what());
  }
  return a;
}

template <class Real>
void write_params(BinaryWriter& w, const ModelParams<Real>& p, const std::string& prefix) {
  p.for_each([&](const std::string& name, const Tensor<Real>& t) { write_tensor(w, prefix + name, t); });
}

template <class Real>
void read_params(BinaryReader& r, ModelParams<Real>& p, const std::string& prefix) {
  p.for_each([&](const std::string& name, Tensor<Real>& t) { read_tensor_into(r, prefix + name, t); });
}

}  // namespace detail

template <class Real>
void write_checkpoint(std::ostream& os, const Checkpoint<Real>& ck) {
  BinaryWriter w(os);
  w.bytes(std::string(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u8(precision_code<Real>());
  detail::write_arch(w, ck.params.arch);
  w.str(ck.config_text);
  ck.vocab.write(w);
  std::uint32_t count = 0;
  ck.params.for_each([&](const std::string&, const Tensor<Real>&) { ++count; });
  w.u32(count);
  detail::write_params(w, ck.params, "");
  w.u8(ck.optimizer ? 1 : 0);
  if (ck.optimizer) {
    const auto& h = ck.optimizer->hyper;
    w.f64(h.lr);
    w.f64(h.decay);
    w.f64(h.momentum);
    w.f64(h.epsilon);
    detail::write_params(w, ck.optimizer->cache, "cache.");
    detail::write_params(w, ck.optimizer->momentum, "momentum.");
  }
  w.u64(ck.progress.epochs_completed);
  w.u64(ck.progress.global_step);
  w.str(ck.progress.rng_state);
  w.u64(ck.progress.metric_log_offset);
}

struct CheckpointHeader {
  int precision_bits = 32;
  Arch arch;
};

inline CheckpointHeader read_checkpoint_header(BinaryReader& r) {
  r.expect_magic(std::string(kCheckpointMagic, 4));
  if (r.u32() != kCheckpointVersion) throw DataError("checkpoint: unsupported version");
  const std::uint8_t code = r.u8();
  if (code != 4 && code != 8) throw DataError("checkpoint: bad precision code");
  return {code * 8, detail::read_arch(r)};
}

/// Values stored at another precision are converted on load.
template <class Real>
Checkpoint<Real> read_checkpoint(std::istream& is, const std::string& name = "checkpoint") {
  BinaryReader r(is, name);
  const CheckpointHeader header = read_checkpoint_header(r);
  Checkpoint<Real> ck;
  ck.params = ModelParams<Real>::zeros(header.arch);
  ck.config_text = r.str();
  ck.vocab = Vocabulary::read(r);
  if (ck.vocab.size() != header.arch.vocab) throw DataError(name + ": vocabulary size differs from architecture");
  std::uint32_t expected = 0;
  ck.params.for_each([&](const std::string&, const Tensor<Real>&) { ++expected; });
  if (r.u32() != expected) throw DataError(name + ": unexpected tensor count");
  detail::read_params(r, ck.params, "");
  if (r.u8() != 0) {
    OptimizerState<Real> opt = OptimizerState<Real>::fresh(header.arch);
    opt.hyper.lr = r.f64();
    opt.hyper.decay = r.f64();
    opt.hyper.momentum = r.f64();
    opt.hyper.epsilon = r.f64();
    detail::read_params(r, opt.cache, "cache.");
    detail::read_params(r, opt.momentum, "momentum.");
    ck.optimizer = std::move(opt);
  }
  ck.progress.epochs_completed = r.u64();
  ck.progress.global_step = r.u64();
  ck.progress.rng_state = r.str();
  ck.progress.metric_log_offset = r.u64();
  return ck;
}

template <class Real>
void save_checkpoint(const std::string& path, const Checkpoint<Real>& ck) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + tmp);
    write_checkpoint(os, ck);
    if (!os) throw DataError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot move checkpoint into " + path);
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  return read_checkpoint<Real>(is, path);
}

inline CheckpointHeader peek_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  BinaryReader r(is, path);
  return read_checkpoint_header(r);
}

}  // namespace headline
