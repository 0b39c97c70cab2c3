#pragma once

// Encoder-decoder forward pass, teacher forcing with scheduled sampling, the
// summed log loss, and backpropagation through time for a whole example.
// Mini-batches are processed example by example at each example's true
// length; padding is never read.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "headline/attention.hpp"
#include "headline/errors.hpp"
#include "headline/layers.hpp"
#include "headline/numerics.hpp"
#include "headline/parallel.hpp"
#include "headline/params.hpp"

namespace headline {

/// One article/headline pair as token ids, each ending in eos.
struct Example {
  std::vector<TokenId> input_ids;
  std::vector<TokenId> target_ids;

  friend bool operator==(const Example&, const Example&) = default;
};

template <class Real>
struct EncodedSequence {
  std::vector<StateStack<Real>> states;               // per input position
  std::vector<std::vector<LstmCache<Real>>> caches;   // only when kept for training

  std::size_t length() const { return states.size(); }
  const StateStack<Real>& final_state() const { return states.back(); }
  std::span<const Real> top(std::size_t t) const { return states[t].back().h; }
};

template <class Real>
void validate_tokens(std::span<const TokenId> ids, const Arch& arch, const char* what) {
  for (TokenId id : ids) require(id < arch.vocab, std::string(what) + ": token id out of range");
}

/// Runs the encoder from an all-zero state over `input_ids`.
template <class Real>
EncodedSequence<Real> encode(std::span<const TokenId> input_ids, const ModelParams<Real>& p,
                             bool keep_caches = false, Dropout<Real> dropout = {}) {
  require(!input_ids.empty(), "encode: empty input");
  require(input_ids.size() <= p.arch.max_in, "encode: input longer than max_in");
  validate_tokens<Real>(input_ids, p.arch, "encode");
  EncodedSequence<Real> enc;
  enc.states.reserve(input_ids.size());
  if (keep_caches) enc.caches.resize(input_ids.size());
  StateStack<Real> state = zero_stack<Real>(p.arch.num_layers, p.arch.hidden);
  for (std::size_t t = 0; t < input_ids.size(); ++t) {
    const auto x = embed(input_ids[t], p.enc_embedding);
    state = stacked_step<Real>(x, state, p.encoder, keep_caches ? &enc.caches[t] : nullptr, dropout);
    enc.states.push_back(state);
  }
  return enc;
}

/// Scoring and value views of the encoder's last layer at every position.
template <class Real>
struct AttentionMemory {
  std::vector<std::span<const Real>> keys;
  std::vector<std::span<const Real>> values;

  AttentionMemory(const EncodedSequence<Real>& enc, const AttentionConfig& cfg) {
    if (cfg.mode == AttentionMode::none) return;
    for (std::size_t t = 0; t < enc.length(); ++t) {
      const auto parts = split_state<Real>(enc.top(t), cfg);
      keys.push_back(parts.attention);
      values.push_back(parts.value);
    }
  }
};

template <class Real>
struct DecoderStep {
  StateStack<Real> state;  // after consuming this step's input token
  std::vector<LstmCache<Real>> caches;
  std::vector<Real> weights;  // empty without attention
  std::vector<Real> context;
  std::vector<Real> logits;
};

/// Feeds `input` to the decoder, attends with the new last-layer state and
/// projects to logits.
template <class Real>
DecoderStep<Real> decoder_step(const ModelParams<Real>& p, const AttentionMemory<Real>& memory,
                               const StateStack<Real>& prev, TokenId input, bool keep_caches = false,
                               Dropout<Real> dropout = {}) {
  require(input < p.arch.vocab, "decoder_step: token id out of range");
  const AttentionConfig cfg = p.arch.attention();
  DecoderStep<Real> step;
  const auto x = embed(input, p.dec_embedding);
  step.state = stacked_step<Real>(x, prev, p.decoder, keep_caches ? &step.caches : nullptr, dropout);
  const auto parts = split_state<Real>(step.state.back().h, cfg);
  if (cfg.mode != AttentionMode::none) {
    step.weights = attention_scores_softmax<Real>(memory.keys, parts.attention);
    step.context = attention_context<Real>(memory.values, step.weights);
  }
  step.logits = project_output<Real>(parts.value, step.context, p.projection);
  return step;
}

template <class Real>
struct DecodeResult {
  Real loss = 0;  // summed over target steps
  std::vector<std::vector<Real>> step_distributions;
  std::vector<Real> step_losses;
  std::vector<TokenId> fed_tokens;
  std::size_t feed_decisions = 0;
  std::size_t sampled_feeds = 0;
};

/// Forward pass with everything retained for backpropagation.
template <class Real>
struct ExampleTrace {
  EncodedSequence<Real> enc;
  std::vector<TokenId> input_ids;
  std::vector<TokenId> target_ids;
  std::vector<DecoderStep<Real>> steps;
  DecodeResult<Real> result;
};

namespace detail {

template <class Real>
DecodeResult<Real> run_decoder(const EncodedSequence<Real>& enc, std::span<const TokenId> target_ids,
                               double sampling_rate, std::mt19937_64& rng,
                               const ModelParams<Real>& p, std::vector<DecoderStep<Real>>* keep,
                               Dropout<Real> dropout = {}) {
  require(sampling_rate >= 0.0 && sampling_rate <= 1.0, "decode_train: sampling_rate outside [0, 1]");
  require(!target_ids.empty(), "decode_train: empty target");
  require(target_ids.size() <= p.arch.max_out, "decode_train: target longer than max_out");
  validate_tokens<Real>(target_ids, p.arch, "decode_train");

  const AttentionMemory<Real> memory(enc, p.arch.attention());
  std::bernoulli_distribution coin(sampling_rate);
  DecodeResult<Real> out;
  StateStack<Real> state = enc.final_state();
  TokenId input = kEosId;
  for (std::size_t s = 0; s < target_ids.size(); ++s) {
    if (s > 0) {
      ++out.feed_decisions;
      if (coin(rng)) {
        input = static_cast<TokenId>(argmax(out.step_distributions.back()));
        ++out.sampled_feeds;
      } else {
        input = target_ids[s - 1];
      }
    }
    out.fed_tokens.push_back(input);
    DecoderStep<Real> step = decoder_step<Real>(p, memory, state, input, keep != nullptr, dropout);
    auto probs = softmax(step.logits);
    const Real ce = cross_entropy(probs, target_ids[s]);
    out.step_losses.push_back(ce);
    out.loss += ce;
    out.step_distributions.push_back(std::move(probs));
    state = step.state;
    if (keep) keep->push_back(std::move(step));
  }
  return out;
}

}  // namespace detail

/// Teacher-forced decode from the encoder's final state, starting from eos.
/// From the second step on, each fed token is replaced by the previous
/// step's argmax with probability `sampling_rate`.
template <class Real>
DecodeResult<Real> decode_train(const EncodedSequence<Real>& enc, std::span<const TokenId> target_ids,
                                double sampling_rate, std::mt19937_64& rng, const ModelParams<Real>& p) {
  return detail::run_decoder<Real>(enc, target_ids, sampling_rate, rng, p, nullptr);
}

template <class Real>
ExampleTrace<Real> forward_example(const Example& ex, const ModelParams<Real>& p, double sampling_rate,
                                   std::mt19937_64& rng, bool training_dropout = false) {
  Dropout<Real> dropout{training_dropout ? p.arch.dropout : 0.0, &rng};
  ExampleTrace<Real> tr;
  tr.input_ids = ex.input_ids;
  tr.target_ids = ex.target_ids;
  tr.enc = encode<Real>(ex.input_ids, p, true, dropout);
  tr.result = detail::run_decoder<Real>(tr.enc, ex.target_ids, sampling_rate, rng, p, &tr.steps, dropout);
  return tr;
}

namespace detail {

template <class Real>
void add_into(std::span<Real> dst, std::span<const Real> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

/// Backpropagates through one time step of the layer stack. `d_top` is the
/// extra gradient on the last layer's h; dh_rec/dc_rec carry the recurrent
/// gradients and are updated in place. Returns dL/d(input embedding).
template <class Real>
std::vector<Real> stack_backward(const std::vector<LstmCache<Real>>& caches,
                                 const std::vector<LstmLayerParams<Real>>& params,
                                 std::vector<LstmLayerParams<Real>>& grads, std::span<const Real> d_top,
                                 std::vector<std::vector<Real>>& dh_rec,
                                 std::vector<std::vector<Real>>& dc_rec) {
  const std::size_t layers = params.size();
  const std::size_t hidden = params.front().hidden();
  std::vector<Real> from_above(d_top.begin(), d_top.end());
  std::vector<Real> dh(hidden), dh_prev(hidden), dc_prev(hidden);
  for (std::size_t l = layers; l-- > 0;) {
    for (std::size_t k = 0; k < hidden; ++k) dh[k] = dh_rec[l][k] + from_above[k];
    std::vector<Real> dx(params[l].input_size());
    lstm_cell_backward<Real>(caches[l], params[l], dh, dc_rec[l], grads[l], dx, dh_prev, dc_prev);
    const auto& mask = caches[l].dropout_mask;
    if (!mask.empty()) {
      for (std::size_t k = 0; k < dx.size(); ++k) dx[k] *= mask[k];
    }
    dh_rec[l] = dh_prev;
    dc_rec[l] = dc_prev;
    from_above = std::move(dx);
  }
  return from_above;
}

}  // namespace detail

/// Accumulates scale * dL/dθ into `grads`, where L is the summed log loss of
/// the traced example. Scheduled-sampling feeds are constants.
template <class Real>
void backward_example(const ExampleTrace<Real>& tr, const ModelParams<Real>& p, ModelParams<Real>& grads,
                      Real scale) {
  const AttentionConfig cfg = p.arch.attention();
  const std::size_t hidden = p.arch.hidden;
  const std::size_t layers = p.arch.num_layers;
  const std::size_t len_in = tr.enc.length();
  const bool attends = cfg.mode != AttentionMode::none;
  const AttentionMemory<Real> memory(tr.enc, cfg);

  std::vector<std::vector<Real>> d_enc_top(len_in, std::vector<Real>(hidden, Real(0)));
  std::vector<std::span<Real>> d_keys, d_values;
  if (attends) {
    for (auto& d : d_enc_top) {
      d_keys.push_back(std::span<Real>(d).subspan(0, cfg.score_size()));
      d_values.push_back(std::span<Real>(d).subspan(cfg.value_offset(), cfg.context_size()));
    }
  }

  std::vector<std::vector<Real>> dh_rec(layers, std::vector<Real>(hidden, Real(0)));
  std::vector<std::vector<Real>> dc_rec = dh_rec;

  for (std::size_t s = tr.steps.size(); s-- > 0;) {
    const DecoderStep<Real>& step = tr.steps[s];
    std::vector<Real> d_logits = tr.result.step_distributions[s];
    d_logits[tr.target_ids[s]] -= Real(1);
    for (auto& v : d_logits) v *= scale;

    const auto parts = split_state<Real>(step.state.back().h, cfg);
    std::vector<Real> d_soft(cfg.softmax_size(), Real(0));
    std::vector<Real> d_ctx(cfg.context_size(), Real(0));
    project_output_backward<Real>(parts.value, step.context, p.projection, d_logits, grads.projection,
                                  d_soft, d_ctx);

    std::vector<Real> d_top(hidden, Real(0));
    detail::add_into<Real>(std::span<Real>(d_top).subspan(cfg.value_offset(), cfg.softmax_size()), d_soft);
    if (attends) {
      std::vector<Real> d_query(cfg.score_size(), Real(0));
      attention_backward<Real>(memory.keys, memory.values, parts.attention, step.weights, d_ctx, d_keys,
                               d_values, d_query);
      detail::add_into<Real>(std::span<Real>(d_top).subspan(0, cfg.score_size()), d_query);
    }
    const auto d_embed =
        detail::stack_backward<Real>(step.caches, p.decoder, grads.decoder, d_top, dh_rec, dc_rec);
    axpy<Real>(Real(1), d_embed, grads.dec_embedding.row(tr.result.fed_tokens[s]));
  }

  // The decoder's initial state is the encoder's final state, so dh_rec and
  // dc_rec now hold the gradient entering the encoder at its last position.
  for (std::size_t t = len_in; t-- > 0;) {
    const auto d_embed =
        detail::stack_backward<Real>(tr.enc.caches[t], p.encoder, grads.encoder, d_enc_top[t], dh_rec, dc_rec);
    axpy<Real>(Real(1), d_embed, grads.enc_embedding.row(tr.input_ids[t]));
  }
}

/// Examples padded to common lengths, with a loss mask that is 1 up to and
/// including each target's eos and 0 afterwards.
struct Batch {
  std::vector<std::vector<TokenId>> inputs;
  std::vector<std::vector<TokenId>> targets;
  std::vector<std::size_t> input_lengths;
  std::vector<std::size_t> target_lengths;
  std::vector<std::vector<std::uint8_t>> mask;

  static Batch from_examples(std::span<const Example> examples, TokenId pad = kEosId) {
    require(!examples.empty(), "Batch: no examples");
    Batch b;
    std::size_t max_in = 0, max_out = 0;
    for (const auto& ex : examples) {
      require(!ex.input_ids.empty() && !ex.target_ids.empty(), "Batch: empty sequence");
      max_in = std::max(max_in, ex.input_ids.size());
      max_out = std::max(max_out, ex.target_ids.size());
    }
    for (const auto& ex : examples) {
      auto in = ex.input_ids;
      auto out = ex.target_ids;
      b.input_lengths.push_back(in.size());
      b.target_lengths.push_back(out.size());
      std::vector<std::uint8_t> m(max_out, 0);
      std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(out.size()), 1);
      in.resize(max_in, pad);
      out.resize(max_out, pad);
      b.inputs.push_back(std::move(in));
      b.targets.push_back(std::move(out));
      b.mask.push_back(std::move(m));
    }
    return b;
  }

  std::size_t size() const { return inputs.size(); }

  /// The i-th example cut back to its true lengths.
  Example example(std::size_t i) const {
    Example ex;
    ex.input_ids.assign(inputs[i].begin(), inputs[i].begin() + static_cast<std::ptrdiff_t>(input_lengths[i]));
    ex.target_ids.assign(targets[i].begin(), targets[i].begin() + static_cast<std::ptrdiff_t>(target_lengths[i]));
    return ex;
  }

  std::size_t target_tokens() const {
    std::size_t n = 0;
    for (const auto& m : mask) n += static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
    return n;
  }
};

/// Independent generator for example `index` of a batch drawn with `seed`.
inline std::mt19937_64 example_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(std::uint64_t(index) >> 32)};
  return std::mt19937_64(seq);
}

template <class Real>
struct BatchResult {
  double mean_loss = 0;  // per target token
  ModelParams<Real> grads;  // of the mean loss
  std::vector<double> example_losses;  // summed per example
  std::size_t tokens = 0;
  std::size_t feed_decisions = 0;
  std::size_t sampled_feeds = 0;
};

/// Examples per gradient buffer. Buffers are summed in a fixed order, so the
/// result does not depend on the thread count.
inline constexpr std::size_t kGradientChunk = 8;

template <class Real>
BatchResult<Real> batch_forward_backward(const Batch& batch, double sampling_rate, std::uint64_t seed,
                                         const ModelParams<Real>& p, std::size_t threads = 1,
                                         bool training_dropout = false) {
  require(batch.size() > 0, "batch_forward_backward: empty batch");
  BatchResult<Real> out;
  out.tokens = batch.target_tokens();
  out.grads = ModelParams<Real>::zeros(p.arch);
  out.example_losses.assign(batch.size(), 0.0);
  std::vector<std::size_t> decisions(batch.size()), sampled(batch.size());
  const Real inv_tokens = Real(1) / static_cast<Real>(out.tokens);

  const std::size_t chunks = (batch.size() + kGradientChunk - 1) / kGradientChunk;
  const std::size_t wave = std::max<std::size_t>(1, resolve_threads(threads));
  for (std::size_t first = 0; first < chunks; first += wave) {
    const std::size_t count = std::min(wave, chunks - first);
    std::vector<ModelParams<Real>> partial(count);
    parallel_for(count, threads, [&](std::size_t k) {
      partial[k] = ModelParams<Real>::zeros(p.arch);
      const std::size_t lo = (first + k) * kGradientChunk;
      const std::size_t hi = std::min(lo + kGradientChunk, batch.size());
      for (std::size_t i = lo; i < hi; ++i) {
        auto rng = example_rng(seed, i);
        const auto tr = forward_example<Real>(batch.example(i), p, sampling_rate, rng, training_dropout);
        backward_example<Real>(tr, p, partial[k], inv_tokens);
        out.example_losses[i] = double(tr.result.loss);
        decisions[i] = tr.result.feed_decisions;
        sampled[i] = tr.result.sampled_feeds;
      }
    });
    for (const auto& g : partial) accumulate(out.grads, g);
  }
  double total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += out.example_losses[i];
    out.feed_decisions += decisions[i];
    out.sampled_feeds += sampled[i];
  }
  out.mean_loss = total / static_cast<double>(out.tokens);
  return out;
}

/// Summed teacher-forced loss of one example (no sampled feeds).
template <class Real>
double example_loss(const Example& ex, const ModelParams<Real>& p) {
  std::mt19937_64 rng(0);
  const auto enc = encode<Real>(ex.input_ids, p);
  return double(decode_train<Real>(enc, ex.target_ids, 0.0, rng, p).loss);
}

/// Mean per-token teacher-forced loss over a batch.
template <class Real>
double holdout_loss(const Batch& batch, const ModelParams<Real>& p, std::size_t threads = 1) {
  require(batch.size() > 0, "holdout_loss: empty batch");
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) { losses[i] = example_loss<Real>(batch.example(i), p); });
  double total = 0;
  for (double l : losses) total += l;
  return total / static_cast<double>(batch.target_tokens());
}

}  // namespace headline
