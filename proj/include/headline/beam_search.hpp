#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "headline/errors.hpp"
#include "headline/numerics.hpp"
#include "headline/params.hpp"
#include "headline/seq2seq.hpp"

namespace headline {

struct BeamConfig {
  std::size_t beam_width = 2;
  std::size_t max_len = 25;  // generated tokens, eos included
  bool length_normalization = false;
  bool suppress_unk = false;

  void validate() const {
    require(beam_width >= 1, "beam: width must be >= 1");
    require(max_len >= 1, "beam: max_len must be >= 1");
  }
};

template <class State>
struct Hypothesis {
  std::vector<TokenId> tokens;  // ends in eos unless force-finished at max_len
  double log_prob = 0;
  State state;  // state to feed tokens.back() into
  bool finished = false;
};

template <class State>
double hypothesis_score(const Hypothesis<State>& h, const BeamConfig& cfg) {
  if (!cfg.length_normalization) return h.log_prob;
  return h.log_prob / static_cast<double>(std::max<std::size_t>(1, h.tokens.size()));
}

// A step model provides
//   using State = ...;
//   State initial_state() const;
//   std::size_t vocab_size() const;
//   std::vector<double> step(const State&, TokenId input, State& next) const;
// where step() returns next-token log-probabilities after feeding `input`.
// The first input is always eos.

/// Keeps the B best partial sequences per step. Finished hypotheses retire
/// into a pool; the search stops once B finished ones outscore every live
/// one, when nothing is live, or at max_len (live hypotheses are then
/// force-finished). Ties prefer the lower token id. Results are sorted best
/// first.
template <class Model>
std::vector<Hypothesis<typename Model::State>> beam_search(const Model& model, const BeamConfig& cfg) {
  using State = typename Model::State;
  using Hyp = Hypothesis<State>;
  cfg.validate();

  struct Candidate {
    double score;
    double log_prob;
    std::size_t parent;
    TokenId token;
  };

  std::vector<Hyp> live(1);
  live[0].state = model.initial_state();
  std::vector<Hyp> pool;

  auto by_score = [&](const Hyp& a, const Hyp& b) {
    const double sa = hypothesis_score(a, cfg), sb = hypothesis_score(b, cfg);
    if (sa != sb) return sa > sb;
    return a.tokens < b.tokens;
  };

  for (std::size_t len = 0; len < cfg.max_len && !live.empty(); ++len) {
    std::vector<State> next_states(live.size());
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const TokenId input = live[i].tokens.empty() ? kEosId : live[i].tokens.back();
      const std::vector<double> logp = model.step(live[i].state, input, next_states[i]);
      for (std::size_t w = 0; w < logp.size(); ++w) {
        if (cfg.suppress_unk && w == kUnkId) continue;
        const double lp = live[i].log_prob + logp[w];
        const double score =
            cfg.length_normalization ? lp / static_cast<double>(live[i].tokens.size() + 1) : lp;
        cands.push_back({score, lp, i, static_cast<TokenId>(w)});
      }
    }
    const std::size_t keep = std::min(cfg.beam_width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.token != b.token) return a.token < b.token;
                        return a.parent < b.parent;
                      });
    std::vector<Hyp> next_live;
    for (std::size_t k = 0; k < keep; ++k) {
      const Candidate& c = cands[k];
      Hyp h;
      h.tokens = live[c.parent].tokens;
      h.tokens.push_back(c.token);
      h.log_prob = c.log_prob;
      h.state = next_states[c.parent];
      h.finished = c.token == kEosId;
      (h.finished ? pool : next_live).push_back(std::move(h));
    }
    live = std::move(next_live);

    if (!cfg.length_normalization && pool.size() >= cfg.beam_width && !live.empty()) {
      std::sort(pool.begin(), pool.end(), by_score);
      const double bar = pool[cfg.beam_width - 1].log_prob;
      double best_live = live.front().log_prob;
      for (const auto& h : live) best_live = std::max(best_live, h.log_prob);
      if (bar >= best_live) live.clear();
    }
  }
  for (auto& h : live) {
    h.finished = true;
    pool.push_back(std::move(h));
  }
  std::sort(pool.begin(), pool.end(), by_score);
  return pool;
}

/// Argmax decoding; ties go to the lowest token id.
template <class Model>
std::vector<TokenId> greedy_decode(const Model& model, std::size_t max_len, double* log_prob = nullptr) {
  typename Model::State state = model.initial_state();
  typename Model::State next;
  std::vector<TokenId> out;
  double total = 0;
  TokenId input = kEosId;
  for (std::size_t len = 0; len < max_len; ++len) {
    const auto logp = model.step(state, input, next);
    input = static_cast<TokenId>(argmax(logp));
    total += logp[input];
    out.push_back(input);
    state = std::move(next);
    if (input == kEosId) break;
  }
  if (log_prob) *log_prob = total;
  return out;
}

/// Adapts an encoded article and a model to the step-model interface.
template <class Real>
class NeuralStepModel {
 public:
  using State = StateStack<Real>;

  NeuralStepModel(const ModelParams<Real>& p, const EncodedSequence<Real>& enc)
      : params_(p), enc_(enc), memory_(enc, p.arch.attention()) {}

  State initial_state() const { return enc_.final_state(); }
  std::size_t vocab_size() const { return params_.arch.vocab; }

  std::vector<double> step(const State& state, TokenId input, State& next) const {
    DecoderStep<Real> s = decoder_step<Real>(params_, memory_, state, input);
    next = std::move(s.state);
    const auto lp = log_softmax<Real>(s.logits);
    return {lp.begin(), lp.end()};
  }

 private:
  const ModelParams<Real>& params_;
  const EncodedSequence<Real>& enc_;
  AttentionMemory<Real> memory_;
};

template <class Real>
std::vector<Hypothesis<StateStack<Real>>> beam_search(const EncodedSequence<Real>& enc,
                                                      const ModelParams<Real>& p, const BeamConfig& cfg) {
  return beam_search(NeuralStepModel<Real>(p, enc), cfg);
}

/// Top hypothesis for an article given as ids (eos appended here, input
/// truncated to max_in - 1 content tokens). The trailing eos is stripped.
template <class Real>
std::vector<TokenId> generate_ids(std::span<const TokenId> article_ids, const ModelParams<Real>& p,
                                  const BeamConfig& cfg) {
  require(!article_ids.empty(), "generate: article is empty");
  std::vector<TokenId> input(article_ids.begin(),
                             article_ids.begin() + static_cast<std::ptrdiff_t>(
                                                       std::min(article_ids.size(), p.arch.max_in - 1)));
  input.push_back(kEosId);
  const auto enc = encode<Real>(input, p);
  auto hyps = beam_search<Real>(enc, p, cfg);
  auto tokens = hyps.front().tokens;
  if (!tokens.empty() && tokens.back() == kEosId) tokens.pop_back();
  return tokens;
}

}  // namespace headline
