#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "headline/attention.hpp"
#include "headline/errors.hpp"
#include "headline/layers.hpp"
#include "headline/numerics.hpp"

namespace headline {

inline constexpr TokenId kEosId = 0;
inline constexpr TokenId kUnkId = 1;

/// Architecture hyperparameters shared by encoder and decoder.
struct Arch {
  std::size_t num_layers = 4;
  std::size_t hidden = 600;
  std::size_t embed = 600;
  std::size_t vocab = 40002;
  AttentionMode attention_mode = AttentionMode::simple;
  std::size_t split_size = 50;
  std::size_t max_in = 50;
  std::size_t max_out = 25;
  double dropout = 0.0;
  double init_range = 0.1;

  AttentionConfig attention() const { return {attention_mode, hidden, split_size}; }

  void validate() const {
    require(num_layers >= 1, "arch: need at least one layer");
    require(hidden >= 1 && embed >= 1, "arch: sizes must be positive");
    require(vocab >= 2, "arch: vocabulary must hold the reserved tokens");
    require(max_in >= 1 && max_out >= 1, "arch: length limits must be positive");
    require(dropout >= 0 && dropout < 1, "arch: dropout must lie in [0, 1)");
    attention().validate();
  }

  friend bool operator==(const Arch&, const Arch&) = default;
};

/// Every trainable tensor of the model. The same layout doubles as the
/// container for gradients and optimizer slots.
template <class Real>
struct ModelParams {
  using value_type = Real;

  Arch arch;
  Tensor<Real> enc_embedding;  // V x D
  Tensor<Real> dec_embedding;  // V x D
  std::vector<LstmLayerParams<Real>> encoder;
  std::vector<LstmLayerParams<Real>> decoder;
  OutputProjection<Real> projection;

  static ModelParams zeros(const Arch& arch) {
    arch.validate();
    const AttentionConfig att = arch.attention();
    ModelParams p;
    p.arch = arch;
    p.enc_embedding = Tensor<Real>({arch.vocab, arch.embed});
    p.dec_embedding = Tensor<Real>({arch.vocab, arch.embed});
    for (std::size_t l = 0; l < arch.num_layers; ++l) {
      const std::size_t in = l == 0 ? arch.embed : arch.hidden;
      p.encoder.push_back(LstmLayerParams<Real>::zeros(in, arch.hidden));
      p.decoder.push_back(LstmLayerParams<Real>::zeros(in, arch.hidden));
    }
    p.projection.w_ho = make_matrix<Real>(arch.vocab, att.softmax_size());
    p.projection.w_co = make_matrix<Real>(arch.vocab, att.context_size());
    p.projection.b_o = Tensor<Real>({arch.vocab});
    return p;
  }

  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor<Real>& t) { n += t.size(); });
    return n;
  }

  std::vector<Tensor<Real>*> tensors() {
    std::vector<Tensor<Real>*> out;
    for_each([&](const std::string&, Tensor<Real>& t) { out.push_back(&t); });
    return out;
  }
  std::vector<const Tensor<Real>*> tensors() const {
    std::vector<const Tensor<Real>*> out;
    for_each([&](const std::string&, const Tensor<Real>& t) { out.push_back(&t); });
    return out;
  }

  void set_zero() {
    for_each([](const std::string&, Tensor<Real>& t) { t.fill(Real(0)); });
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (!(a.arch == b.arch)) return false;
    auto ta = a.tensors();
    auto tb = b.tensors();
    for (std::size_t k = 0; k < ta.size(); ++k) {
      if (!(*ta[k] == *tb[k])) return false;
    }
    return true;
  }

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    f("encoder.embedding", self.enc_embedding);
    f("decoder.embedding", self.dec_embedding);
    auto layers = [&](const char* side, auto& stack) {
      for (std::size_t l = 0; l < stack.size(); ++l) {
        const std::string base = std::string(side) + ".layer" + std::to_string(l) + ".";
        f(base + "w_x", stack[l].w_x);
        f(base + "w_h", stack[l].w_h);
        f(base + "b", stack[l].b);
      }
    };
    layers("encoder", self.encoder);
    layers("decoder", self.decoder);
    f("output.w_ho", self.projection.w_ho);
    f("output.w_co", self.projection.w_co);
    f("output.b_o", self.projection.b_o);
  }
};

/// a += s * b over every tensor.
template <class Real>
void accumulate(ModelParams<Real>& a, const ModelParams<Real>& b, Real s = Real(1)) {
  auto ta = a.tensors();
  auto tb = b.tensors();
  require(ta.size() == tb.size(), "accumulate: layout mismatch");
  for (std::size_t k = 0; k < ta.size(); ++k) {
    require(ta[k]->size() == tb[k]->size(), "accumulate: shape mismatch");
    axpy<Real>(s, tb[k]->values(), ta[k]->values());
  }
}

template <class Real>
void scale(ModelParams<Real>& a, Real s) {
  a.for_each([&](const std::string&, Tensor<Real>& t) {
    for (auto& v : t.values()) v *= s;
  });
}

template <class Real>
double global_norm(const ModelParams<Real>& a) {
  double sq = 0;
  a.for_each([&](const std::string&, const Tensor<Real>& t) {
    for (Real v : t.values()) sq += double(v) * double(v);
  });
  return std::sqrt(sq);
}

template <class To, class From>
ModelParams<To> convert_params(const ModelParams<From>& src) {
  ModelParams<To> dst = ModelParams<To>::zeros(src.arch);
  auto ts = src.tensors();
  auto td = dst.tensors();
  for (std::size_t k = 0; k < ts.size(); ++k) {
    for (std::size_t i = 0; i < ts[k]->size(); ++i) (*td[k])[i] = static_cast<To>((*ts[k])[i]);
  }
  return dst;
}

/// Uniform U[-r, r] weights (r = arch.init_range, 0.1 by default) from a
/// seeded generator; output biases set to the log unigram probability.
/// Every count must be at least 1, so callers smooth before calling.
template <class Real>
ModelParams<Real> init_params(const Arch& arch, std::span<const std::uint64_t> unigram_counts,
                              std::uint64_t seed) {
  require(unigram_counts.size() == arch.vocab, "init_params: one count per vocabulary entry required");
  double total = 0;
  for (auto c : unigram_counts) total += double(c);
  require(total > 0, "init_params: total unigram count is zero");
  for (auto c : unigram_counts) require(c >= 1, "init_params: every count must be >= 1 (smooth first)");

  ModelParams<Real> p = ModelParams<Real>::zeros(arch);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-arch.init_range, arch.init_range);
  p.for_each([&](const std::string& name, Tensor<Real>& t) {
    if (name == "output.b_o") return;
    for (auto& v : t.values()) v = static_cast<Real>(dist(rng));
  });
  for (std::size_t w = 0; w < arch.vocab; ++w) {
    p.projection.b_o[w] = static_cast<Real>(std::log(double(unigram_counts[w]) / total));
  }
  return p;
}

}  // namespace headline
