#pragma once

// Text-in, text-out headline generation on top of the id-level beam search.

#include <string>
#include <string_view>
#include <vector>

#include "headline/beam_search.hpp"
#include "headline/corpus.hpp"
#include "headline/params.hpp"

namespace headline {

/// First paragraph, tokenized and mapped through the vocabulary (unknown
/// words become unk). No eos is appended.
inline std::vector<TokenId> article_to_ids(std::string_view text, const Vocabulary& vocab) {
  return vocab.encode(tokenize(extract_first_paragraph(text)));
}

template <class Real>
std::vector<std::string> generate(std::string_view article, const ModelParams<Real>& p, const Vocabulary& vocab,
                                  const BeamConfig& cfg) {
  const auto ids = article_to_ids(article, vocab);
  return vocab.decode(generate_ids<Real>(ids, p, cfg));
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

}  // namespace headline
