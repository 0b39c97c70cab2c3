#pragma once

// Looking inside a trained model: which words the decoder state, the
// attention context, or an encoder position would push up in the softmax
// input, attention traces over a decode, and raw values of the units that
// score positions in the simple attention layout.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "headline/attention.hpp"
#include "headline/beam_search.hpp"
#include "headline/errors.hpp"
#include "headline/params.hpp"
#include "headline/seq2seq.hpp"

namespace headline {

struct ScoredToken {
  TokenId token;
  double score;
};

/// Top-k tokens, scores non-increasing, ties to the lower id.
struct WordProjection {
  std::vector<ScoredToken> entries;
};

inline WordProjection top_k(std::span<const double> scores, std::size_t k) {
  std::vector<TokenId> order(scores.size());
  std::iota(order.begin(), order.end(), TokenId{0});
  k = std::min(k, scores.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](TokenId a, TokenId b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  WordProjection wp;
  for (std::size_t i = 0; i < k; ++i) wp.entries.push_back({order[i], scores[order[i]]});
  return wp;
}

namespace detail {

template <class Real>
std::vector<double> affine_scores(const Tensor<Real>& w, std::span<const Real> v, const Tensor<Real>& b) {
  require(!w.empty() && w.cols() == v.size(), "projection: vector size does not match the weight matrix");
  std::vector<Real> out(b.values().begin(), b.values().end());
  gemv_acc<Real>(w, v, out);
  return {out.begin(), out.end()};
}

}  // namespace detail

/// W_ho·h + b_o for the decoder's softmax part.
template <class Real>
std::vector<double> decoder_hidden_scores(std::span<const Real> h, const OutputProjection<Real>& proj) {
  return detail::affine_scores(proj.w_ho, h, proj.b_o);
}

/// W_co·v + b_o; v is a context or an encoder state's context part.
template <class Real>
std::vector<double> context_scores(std::span<const Real> v, const OutputProjection<Real>& proj) {
  return detail::affine_scores(proj.w_co, v, proj.b_o);
}

template <class Real>
WordProjection decoder_hidden_words(std::span<const Real> h, const OutputProjection<Real>& proj, std::size_t k) {
  return top_k(decoder_hidden_scores(h, proj), k);
}

template <class Real>
WordProjection context_words(std::span<const Real> c, const OutputProjection<Real>& proj, std::size_t k) {
  return top_k(context_scores(c, proj), k);
}

/// Words recalled if attention fell entirely on one input position.
template <class Real>
WordProjection encoder_position_words(std::span<const Real> h_ctx_part, const OutputProjection<Real>& proj,
                                      std::size_t k) {
  return top_k(context_scores(h_ctx_part, proj), k);
}

struct AttentionTrace {
  std::vector<std::vector<double>> weights;  // output step x input position
  std::vector<TokenId> input_tokens;
  std::vector<TokenId> output_tokens;
};

struct DecodeTrace {
  AttentionTrace attention;
  std::vector<std::vector<double>> contexts;
  std::vector<WordProjection> decoder_words;  // per output step
  std::vector<WordProjection> context_words;  // per output step
  std::vector<WordProjection> encoder_words;  // per input position
};

/// Beam-decodes `input_ids` (which must end in eos), then replays the chosen
/// output recording attention weights, contexts and projections.
template <class Real>
DecodeTrace trace_decode(const ModelParams<Real>& p, std::span<const TokenId> input_ids, const BeamConfig& cfg,
                         std::size_t k) {
  const AttentionConfig att = p.arch.attention();
  if (att.mode == AttentionMode::none) throw UnsupportedModeError("trace: model has no attention");
  const auto enc = encode<Real>(input_ids, p);
  const auto best = beam_search<Real>(enc, p, cfg).front();

  DecodeTrace tr;
  tr.attention.input_tokens.assign(input_ids.begin(), input_ids.end());
  tr.attention.output_tokens = best.tokens;
  for (std::size_t t = 0; t < enc.length(); ++t) {
    tr.encoder_words.push_back(encoder_position_words<Real>(split_state<Real>(enc.top(t), att).value, p.projection, k));
  }
  const AttentionMemory<Real> memory(enc, att);
  StateStack<Real> state = enc.final_state();
  TokenId input = kEosId;
  for (TokenId out : best.tokens) {
    auto step = decoder_step<Real>(p, memory, state, input);
    const auto parts = split_state<Real>(step.state.back().h, att);
    tr.attention.weights.emplace_back(step.weights.begin(), step.weights.end());
    tr.contexts.emplace_back(step.context.begin(), step.context.end());
    tr.decoder_words.push_back(decoder_hidden_words<Real>(parts.value, p.projection, k));
    tr.context_words.push_back(context_words<Real>(std::span<const Real>(step.context), p.projection, k));
    state = std::move(step.state);
    input = out;
  }
  return tr;
}

struct NeuronReport {
  std::vector<std::size_t> units;
  std::vector<TokenId> input_tokens;
  std::vector<TokenId> output_tokens;
  std::vector<std::vector<double>> encoder;  // input position x unit
  std::vector<std::vector<double>> decoder;  // output step x unit
};

/// Values of the selected scoring units (simple layout only) at each input
/// position and at each step of the beam-decoded output.
template <class Real>
NeuronReport neuron_activations(const ModelParams<Real>& p, std::span<const TokenId> input_ids,
                                std::span<const std::size_t> units, const BeamConfig& cfg) {
  const AttentionConfig att = p.arch.attention();
  if (att.mode != AttentionMode::simple) {
    throw UnsupportedModeError("neuron report requires a simple-attention model (this one uses " +
                               to_string(att.mode) + " attention)");
  }
  for (std::size_t u : units) require(u < att.split_size, "neuron report: unit index >= attention split size");

  NeuronReport rep;
  rep.units.assign(units.begin(), units.end());
  rep.input_tokens.assign(input_ids.begin(), input_ids.end());
  const auto enc = encode<Real>(input_ids, p);
  auto pick = [&](std::span<const Real> h) {
    std::vector<double> row;
    for (std::size_t u : units) row.push_back(double(h[u]));
    return row;
  };
  for (std::size_t t = 0; t < enc.length(); ++t) rep.encoder.push_back(pick(enc.top(t)));

  const auto best = beam_search<Real>(enc, p, cfg).front();
  rep.output_tokens = best.tokens;
  const AttentionMemory<Real> memory(enc, att);
  StateStack<Real> state = enc.final_state();
  TokenId input = kEosId;
  for (TokenId out : best.tokens) {
    auto step = decoder_step<Real>(p, memory, state, input);
    rep.decoder.push_back(pick(step.state.back().h));
    state = std::move(step.state);
    input = out;
  }
  return rep;
}

}  // namespace headline
