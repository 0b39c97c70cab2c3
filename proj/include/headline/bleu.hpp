#pragma once

// Corpus-level BLEU: clipped n-gram precisions for n = 1..4 pooled over the
// whole corpus, uniform geometric mean, brevity penalty.

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "headline/beam_search.hpp"
#include "headline/errors.hpp"
#include "headline/numerics.hpp"
#include "headline/params.hpp"
#include "headline/seq2seq.hpp"

namespace headline {

inline constexpr std::size_t kBleuOrder = 4;

struct BleuReport {
  double bleu = 0;
  std::array<double, kBleuOrder> per_n_precision{};
  std::array<std::size_t, kBleuOrder> matches{};
  std::array<std::size_t, kBleuOrder> totals{};
  double brevity_penalty = 0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

struct BleuOptions {
  /// Add-one smoothing of the n >= 2 precisions. Off reproduces the
  /// original metric.
  bool smoothing = false;
  TokenId eos = kEosId;
};

namespace detail {

inline std::vector<TokenId> strip_eos(std::span<const TokenId> seq, TokenId eos) {
  std::vector<TokenId> out;
  for (TokenId t : seq) {
    if (t != eos) out.push_back(t);
  }
  return out;
}

inline std::map<std::vector<TokenId>, std::size_t> ngram_counts(const std::vector<TokenId>& seq, std::size_t n) {
  std::map<std::vector<TokenId>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[std::vector<TokenId>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                                  seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace detail

inline BleuReport corpus_bleu(const std::vector<std::vector<TokenId>>& hypotheses,
                              const std::vector<std::vector<TokenId>>& references, BleuOptions opts = {}) {
  require(!hypotheses.empty(), "corpus_bleu: empty corpus");
  require(hypotheses.size() == references.size(), "corpus_bleu: hypothesis/reference count mismatch");
  BleuReport r;
  for (std::size_t k = 0; k < hypotheses.size(); ++k) {
    const auto hyp = detail::strip_eos(hypotheses[k], opts.eos);
    const auto ref = detail::strip_eos(references[k], opts.eos);
    r.hyp_length += hyp.size();
    r.ref_length += ref.size();
    for (std::size_t n = 1; n <= kBleuOrder; ++n) {
      const auto hc = detail::ngram_counts(hyp, n);
      const auto rc = detail::ngram_counts(ref, n);
      for (const auto& [gram, count] : hc) {
        r.totals[n - 1] += count;
        const auto it = rc.find(gram);
        if (it != rc.end()) r.matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  for (std::size_t n = 0; n < kBleuOrder; ++n) {
    double num = double(r.matches[n]), den = double(r.totals[n]);
    if (opts.smoothing && n > 0) {
      num += 1;
      den += 1;
    }
    r.per_n_precision[n] = den > 0 ? num / den : 0.0;
  }
  if (r.hyp_length == 0) {
    r.brevity_penalty = 0;
    r.bleu = 0;
    return r;
  }
  r.brevity_penalty = std::min(1.0, std::exp(1.0 - double(r.ref_length) / double(r.hyp_length)));
  double log_mean = 0;
  for (double p : r.per_n_precision) {
    if (p <= 0) return r;  // bleu stays 0
    log_mean += 0.25 * std::log(p);
  }
  r.bleu = r.brevity_penalty * std::exp(log_mean);
  return r;
}

/// Beam-decodes every holdout example and scores the batch with corpus BLEU.
template <class Real>
BleuReport evaluate_holdout(const ModelParams<Real>& p, std::span<const Example> holdout, const BeamConfig& cfg,
                            std::size_t threads = 1, BleuOptions opts = {}) {
  require(!holdout.empty(), "evaluate_holdout: no holdout examples");
  std::vector<std::vector<TokenId>> hyps(holdout.size()), refs(holdout.size());
  parallel_for(holdout.size(), threads, [&](std::size_t i) {
    const auto enc = encode<Real>(holdout[i].input_ids, p);
    hyps[i] = beam_search<Real>(enc, p, cfg).front().tokens;
    refs[i] = holdout[i].target_ids;
  });
  return corpus_bleu(hyps, refs, opts);
}

}  // namespace headline
