#pragma once

// Dot-product attention over the encoder's last layer, in two layouts:
//   complex: the full hidden vector scores positions and forms the context;
//   simple:  units [0, A) score positions, units [A, H) form the context and
//            (on the decoder side) feed the softmax.
// `none` disables attention altogether and exists for ablations.

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "headline/errors.hpp"
#include "headline/numerics.hpp"

namespace headline {

enum class AttentionMode { none, complex, simple };

inline std::string to_string(AttentionMode m) {
  switch (m) {
    case AttentionMode::none: return "none";
    case AttentionMode::complex: return "complex";
    case AttentionMode::simple: return "simple";
  }
  return "?";
}

inline AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "none") return AttentionMode::none;
  if (s == "complex") return AttentionMode::complex;
  if (s == "simple") return AttentionMode::simple;
  throw ContractError("unknown attention mode '" + s + "' (expected simple, complex or none)");
}

struct AttentionConfig {
  AttentionMode mode = AttentionMode::simple;
  std::size_t hidden_size = 600;
  std::size_t split_size = 50;

  void validate() const {
    require(hidden_size > 0, "attention: hidden size must be positive");
    if (mode == AttentionMode::simple) {
      require(split_size > 0 && split_size < hidden_size,
              "attention: simple mode needs 0 < split_size < hidden_size");
    }
  }

  /// Units used to score encoder positions.
  std::size_t score_size() const {
    switch (mode) {
      case AttentionMode::none: return 0;
      case AttentionMode::complex: return hidden_size;
      case AttentionMode::simple: return split_size;
    }
    return 0;
  }

  /// Units of the encoder state averaged into the context.
  std::size_t context_size() const {
    switch (mode) {
      case AttentionMode::none: return 0;
      case AttentionMode::complex: return hidden_size;
      case AttentionMode::simple: return hidden_size - split_size;
    }
    return 0;
  }

  /// Units of the decoder state fed directly into the softmax layer.
  std::size_t softmax_size() const {
    return mode == AttentionMode::simple ? hidden_size - split_size : hidden_size;
  }

  /// Offset of the context / softmax part inside a hidden vector.
  std::size_t value_offset() const { return mode == AttentionMode::simple ? split_size : 0; }

  friend bool operator==(const AttentionConfig&, const AttentionConfig&) = default;
};

/// Normalized weights over input positions.
struct AttentionWeights {
  std::vector<double> weights;
};

template <class Real>
struct StateParts {
  std::span<const Real> attention;  // scores positions
  std::span<const Real> value;      // context (encoder) or softmax input (decoder)
};

/// Slices a last-layer hidden vector into its scoring and value parts.
/// In complex mode both parts alias the whole vector.
template <class Real>
StateParts<Real> split_state(std::span<const Real> h, const AttentionConfig& cfg) {
  cfg.validate();
  require(h.size() == cfg.hidden_size, "split_state: hidden vector has wrong size");
  switch (cfg.mode) {
    case AttentionMode::none: return {{}, h};
    case AttentionMode::complex: return {h, h};
    case AttentionMode::simple:
      return {h.subspan(0, cfg.split_size), h.subspan(cfg.split_size)};
  }
  return {};
}

/// weights[t] = exp(enc[t]·dec) / Σ exp(enc[τ]·dec), max-subtracted.
template <class Real>
std::vector<Real> attention_scores_softmax(const std::vector<std::span<const Real>>& enc,
                                           std::span<const Real> dec) {
  require(!enc.empty(), "attention_weights: no encoder positions");
  std::vector<Real> scores(enc.size());
  for (std::size_t t = 0; t < enc.size(); ++t) {
    require(enc[t].size() == dec.size(), "attention_weights: dimension mismatch");
    scores[t] = dot<Real>(enc[t], dec);
  }
  return softmax(std::span<const Real>(scores));
}

template <class Real>
AttentionWeights attention_weights(const std::vector<std::vector<Real>>& enc_att_vectors,
                                   const std::vector<Real>& dec_att_vector) {
  std::vector<std::span<const Real>> views(enc_att_vectors.begin(), enc_att_vectors.end());
  auto w = attention_scores_softmax<Real>(views, dec_att_vector);
  return {std::vector<double>(w.begin(), w.end())};
}

/// Σ_t w[t]·enc[t]
template <class Real>
std::vector<Real> attention_context(const std::vector<std::span<const Real>>& enc,
                                    std::span<const Real> weights) {
  require(enc.size() == weights.size(), "context: weight count differs from position count");
  if (enc.empty()) return {};
  std::vector<Real> ctx(enc.front().size(), Real(0));
  for (std::size_t t = 0; t < enc.size(); ++t) {
    require(enc[t].size() == ctx.size(), "context: ragged encoder vectors");
    axpy<Real>(weights[t], enc[t], ctx);
  }
  return ctx;
}

template <class Real>
std::vector<Real> context(const std::vector<std::vector<Real>>& enc_ctx_vectors,
                          const AttentionWeights& w) {
  std::vector<std::span<const Real>> views(enc_ctx_vectors.begin(), enc_ctx_vectors.end());
  std::vector<Real> weights(w.weights.begin(), w.weights.end());
  return attention_context<Real>(views, weights);
}

/// Backward through context = Σ w_t v_t and w = softmax(s), s_t = k_t·q.
/// Accumulates into d_keys[t], d_values[t] and d_query.
template <class Real>
void attention_backward(const std::vector<std::span<const Real>>& keys,
                        const std::vector<std::span<const Real>>& values,
                        std::span<const Real> query, std::span<const Real> weights,
                        std::span<const Real> d_context,
                        const std::vector<std::span<Real>>& d_keys,
                        const std::vector<std::span<Real>>& d_values, std::span<Real> d_query) {
  const std::size_t n = weights.size();
  std::vector<Real> d_w(n);
  for (std::size_t t = 0; t < n; ++t) {
    d_w[t] = dot<Real>(values[t], d_context);
    axpy<Real>(weights[t], d_context, d_values[t]);
  }
  Real mean = 0;
  for (std::size_t t = 0; t < n; ++t) mean += weights[t] * d_w[t];
  for (std::size_t t = 0; t < n; ++t) {
    const Real d_score = weights[t] * (d_w[t] - mean);
    if (d_score == Real(0)) continue;
    axpy<Real>(d_score, query, d_keys[t]);
    axpy<Real>(d_score, keys[t], d_query);
  }
}

}  // namespace headline
