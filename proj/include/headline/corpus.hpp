#pragma once

// Article preprocessing: tokenization, first-paragraph extraction, length
// filtering, time-based train/holdout split, vocabulary construction and the
// prepared-dataset container.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "headline/binary_io.hpp"
#include "headline/errors.hpp"
#include "headline/numerics.hpp"
#include "headline/params.hpp"
#include "headline/seq2seq.hpp"

namespace headline {

// ------------------------------------------------------------- tokenizer

namespace detail {

// Bytes >= 0x80 belong to UTF-8 sequences and are treated as letters.
inline bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }
inline bool is_letter(unsigned char c) { return std::isalpha(c) || c >= 0x80; }
inline bool is_space(unsigned char c) { return std::isspace(c) != 0; }

}  // namespace detail

/// Lowercases and splits punctuation from words. Every maximal run of
/// characters that are neither letters nor digits becomes its own token,
/// except a single ' or . with a letter/digit on both sides, which stays in
/// the word ("don't", "3.5", "u.s"), and a final period closing an
/// abbreviation of the form x.y. ("u.s.", "a.m.").
inline std::vector<std::string> tokenize(std::string_view text) {
  using detail::is_word_char;
  std::vector<std::string> tokens;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && detail::is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t end = i;
    while (end < n && !detail::is_space(static_cast<unsigned char>(text[end]))) ++end;
    // one whitespace-delimited chunk [i, end)
    std::string cur;
    bool has_period = false;
    auto flush = [&] {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
      has_period = false;
    };
    std::size_t k = i;
    while (k < end) {
      const auto c = static_cast<unsigned char>(text[k]);
      if (is_word_char(c)) {
        cur.push_back(static_cast<char>(std::tolower(c)));
        ++k;
        continue;
      }
      std::size_t run_end = k;
      while (run_end < end && !is_word_char(static_cast<unsigned char>(text[run_end]))) ++run_end;
      const bool after_word = k > i && is_word_char(static_cast<unsigned char>(text[k - 1]));
      const bool before_word = run_end < end;
      if (run_end - k == 1 && (c == '\'' || c == '.') && after_word && before_word) {
        cur.push_back(static_cast<char>(c));
        has_period = has_period || c == '.';
        k = run_end;
        continue;
      }
      // "u.s" + "." -> "u.s."; the last segment must be a single letter
      if (c == '.' && after_word && has_period && cur.size() >= 2 && cur[cur.size() - 2] == '.' &&
          detail::is_letter(static_cast<unsigned char>(cur.back()))) {
        cur.push_back('.');
        flush();
        k += 1;
        continue;
      }
      flush();
      tokens.emplace_back(text.substr(k, run_end - k));
      k = run_end;
    }
    flush();
    i = end;
  }
  return tokens;
}

/// Text up to the first blank (empty or whitespace-only) line.
inline std::string extract_first_paragraph(std::string_view body) {
  std::string out;
  std::size_t pos = 0;
  bool first = true;
  while (pos <= body.size()) {
    std::size_t nl = body.find('\n', pos);
    if (nl == std::string_view::npos) nl = body.size();
    std::string_view line = body.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const bool blank = std::all_of(line.begin(), line.end(),
                                   [](char c) { return detail::is_space(static_cast<unsigned char>(c)); });
    if (blank) break;
    if (!first) out.push_back('\n');
    out.append(line);
    first = false;
    pos = nl + 1;
  }
  return out;
}

// ------------------------------------------------------------ vocabulary

/// Token <-> id map. Id 0 is <eos>, id 1 is <unk>; the rest are ordered by
/// descending training frequency, ties broken lexicographically.
class Vocabulary {
 public:
  static constexpr std::string_view kEosToken = "<eos>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary() {
    add(std::string(kEosToken), 0);
    add(std::string(kUnkToken), 0);
  }

  /// Keeps the `max_words` most frequent entries of `frequencies`.
  static Vocabulary build(const std::map<std::string, std::uint64_t>& frequencies, std::size_t max_words) {
    std::vector<std::pair<std::string, std::uint64_t>> ranked(frequencies.begin(), frequencies.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocabulary v;
    for (std::size_t k = 0; k < ranked.size() && k < max_words; ++k) v.add(ranked[k].first, ranked[k].second);
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

  TokenId id(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnkId : it->second;
  }
  const std::string& token(TokenId id) const {
    require(id < tokens_.size(), "vocabulary: id out of range");
    return tokens_[id];
  }

  std::uint64_t count(TokenId id) const { return counts_.at(id); }
  void set_count(TokenId id, std::uint64_t c) { counts_.at(id) = c; }
  void add_count(TokenId id, std::uint64_t c) { counts_.at(id) += c; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }

  /// Counts + 1, so every entry has non-zero probability.
  std::vector<std::uint64_t> smoothed_counts() const {
    std::vector<std::uint64_t> out(counts_);
    for (auto& c : out) ++c;
    return out;
  }

  std::vector<TokenId> encode(const std::vector<std::string>& tokens) const {
    std::vector<TokenId> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
  }
  std::vector<std::string> decode(std::span<const TokenId> ids) const {
    std::vector<std::string> out;
    for (TokenId i : ids) out.push_back(token(i));
    return out;
  }

  /// Appends a token; used when loading a stored vocabulary.
  TokenId add(std::string token, std::uint64_t count) {
    require(!index_.count(token), "vocabulary: duplicate token '" + token + "'");
    const auto id = static_cast<TokenId>(tokens_.size());
    index_.emplace(token, id);
    tokens_.push_back(std::move(token));
    counts_.push_back(count);
    return id;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.counts_ == b.counts_;
  }

  void write(BinaryWriter& w) const {
    w.u32(static_cast<std::uint32_t>(size()));
    for (std::size_t k = 0; k < size(); ++k) {
      w.str(tokens_[k]);
      w.u64(counts_[k]);
    }
  }
  static Vocabulary read(BinaryReader& r) {
    const std::uint32_t n = r.u32();
    if (n < 2) throw DataError("vocabulary: missing reserved tokens");
    Vocabulary v;
    v.tokens_.clear();
    v.index_.clear();
    v.counts_.clear();
    for (std::uint32_t k = 0; k < n; ++k) {
      std::string tok = r.str();
      const std::uint64_t c = r.u64();
      if (v.index_.count(tok)) throw DataError("vocabulary: duplicate token");
      v.add(std::move(tok), c);
    }
    if (v.token(kEosId) != kEosToken || v.token(kUnkId) != kUnkToken) {
      throw DataError("vocabulary: reserved ids are not <eos>/<unk>");
    }
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::uint64_t> counts_;
};

// -------------------------------------------------------------- articles

struct Date {
  int year = 0;
  int month = 0;
  int day = 0;

  int month_key() const { return year * 12 + (month - 1); }
  friend bool operator==(const Date&, const Date&) = default;
};

/// Parses YYYY-MM-DD (or YYYY-MM).
inline std::optional<Date> parse_date(std::string_view s) {
  Date d;
  char dash1 = 0, dash2 = 0;
  std::istringstream is{std::string(s)};
  if (!(is >> d.year >> dash1 >> d.month) || dash1 != '-') return std::nullopt;
  if (is >> dash2) {
    if (dash2 != '-' || !(is >> d.day)) return std::nullopt;
  }
  if (d.month < 1 || d.month > 12) return std::nullopt;
  return d;
}

struct RawArticle {
  std::optional<Date> date;
  std::string headline;
  std::string body;  // paragraphs separated by blank lines
};

struct PrepareOptions {
  std::size_t vocab_size = 40000;
  std::size_t max_headline = 25;  // tokens, eos included
  std::size_t max_text = 50;      // tokens, eos included
  std::uint64_t seed = 1;
};

enum class Rejection { none, no_headline, no_text, headline_too_long, text_too_long };

inline std::string to_string(Rejection r) {
  switch (r) {
    case Rejection::none: return "accepted";
    case Rejection::no_headline: return "no_headline";
    case Rejection::no_text: return "no_text";
    case Rejection::headline_too_long: return "headline_too_long";
    case Rejection::text_too_long: return "text_too_long";
  }
  return "?";
}

struct PrepareStats {
  std::uint64_t total = 0;
  std::uint64_t accepted = 0;
  std::uint64_t no_headline = 0;
  std::uint64_t no_text = 0;
  std::uint64_t headline_too_long = 0;
  std::uint64_t text_too_long = 0;
  // accepted = train + gap + holdout
  std::uint64_t train = 0;
  std::uint64_t gap = 0;
  std::uint64_t holdout = 0;

  std::uint64_t rejected() const { return no_headline + no_text + headline_too_long + text_too_long; }
  friend bool operator==(const PrepareStats&, const PrepareStats&) = default;
};

struct TokenizedArticle {
  std::optional<Date> date;
  std::vector<std::string> headline;  // without eos
  std::vector<std::string> text;      // first paragraph, without eos
};

/// Tokenizes headline and first paragraph and applies the length filter.
inline Rejection tokenize_article(const RawArticle& a, const PrepareOptions& opts, TokenizedArticle& out) {
  out.date = a.date;
  out.headline = tokenize(a.headline);
  out.text = tokenize(extract_first_paragraph(a.body));
  if (out.headline.empty()) return Rejection::no_headline;
  if (out.text.empty()) return Rejection::no_text;
  if (out.headline.size() + 1 > opts.max_headline) return Rejection::headline_too_long;
  if (out.text.size() + 1 > opts.max_text) return Rejection::text_too_long;
  return Rejection::none;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> gap;
  std::vector<std::size_t> holdout;
};

/// Holdout = the final calendar month, the month before it is dropped, the
/// rest is training data (shuffled with `seed`). Without dates on every item
/// or with fewer than three distinct months the split falls back to
/// 90% / 2% / 8% by position.
inline SplitIndices split_train_holdout(const std::vector<std::optional<Date>>& dates, std::uint64_t seed) {
  SplitIndices s;
  const std::size_t n = dates.size();
  std::set<int> months;
  bool all_dated = true;
  for (const auto& d : dates) {
    if (!d) {
      all_dated = false;
      break;
    }
    months.insert(d->month_key());
  }
  if (all_dated && months.size() >= 3) {
    const int last = *months.rbegin();
    const int second_last = *std::next(months.rbegin());
    for (std::size_t i = 0; i < n; ++i) {
      const int m = dates[i]->month_key();
      (m == last ? s.holdout : m == second_last ? s.gap : s.train).push_back(i);
    }
  } else {
    const std::size_t n_train = n * 90 / 100;
    const std::size_t n_gap = n * 2 / 100;
    for (std::size_t i = 0; i < n; ++i) {
      (i < n_train ? s.train : i < n_train + n_gap ? s.gap : s.holdout).push_back(i);
    }
  }
  std::mt19937_64 rng(seed);
  std::shuffle(s.train.begin(), s.train.end(), rng);
  return s;
}

struct PreparedDataset {
  Vocabulary vocab;
  std::vector<Example> train;
  std::vector<Example> holdout;
  PrepareStats stats;
  PrepareOptions options;
};

/// Full preprocessing pipeline. The vocabulary is built from the training
/// split only; both splits are mapped through it.
inline PreparedDataset prepare(const std::vector<RawArticle>& articles, const PrepareOptions& opts,
                               std::vector<Rejection>* decisions = nullptr) {
  require(opts.max_headline >= 2 && opts.max_text >= 2, "prepare: length limits must allow one token plus eos");
  PreparedDataset ds;
  ds.options = opts;
  ds.stats.total = articles.size();
  std::vector<TokenizedArticle> kept;
  if (decisions) decisions->clear();
  for (const auto& a : articles) {
    TokenizedArticle t;
    const Rejection r = tokenize_article(a, opts, t);
    if (decisions) decisions->push_back(r);
    switch (r) {
      case Rejection::none:
        ++ds.stats.accepted;
        kept.push_back(std::move(t));
        break;
      case Rejection::no_headline: ++ds.stats.no_headline; break;
      case Rejection::no_text: ++ds.stats.no_text; break;
      case Rejection::headline_too_long: ++ds.stats.headline_too_long; break;
      case Rejection::text_too_long: ++ds.stats.text_too_long; break;
    }
  }

  std::vector<std::optional<Date>> dates;
  for (const auto& t : kept) dates.push_back(t.date);
  const SplitIndices split = split_train_holdout(dates, opts.seed);
  ds.stats.train = split.train.size();
  ds.stats.gap = split.gap.size();
  ds.stats.holdout = split.holdout.size();

  std::map<std::string, std::uint64_t> freq;
  for (std::size_t i : split.train) {
    for (const auto& w : kept[i].headline) ++freq[w];
    for (const auto& w : kept[i].text) ++freq[w];
  }
  ds.vocab = Vocabulary::build(freq, opts.vocab_size);

  auto to_ids = [&](const std::vector<std::string>& words, bool count) {
    std::vector<TokenId> ids = ds.vocab.encode(words);
    ids.push_back(kEosId);
    if (count) {
      for (TokenId id : ids) {
        if (id == kEosId || id == kUnkId) ds.vocab.add_count(id, 1);
      }
    }
    return ids;
  };
  for (std::size_t i : split.train) {
    ds.train.push_back({to_ids(kept[i].text, true), to_ids(kept[i].headline, true)});
  }
  for (std::size_t i : split.holdout) {
    ds.holdout.push_back({to_ids(kept[i].text, false), to_ids(kept[i].headline, false)});
  }
  return ds;
}

// ---------------------------------------------------------- input files

enum class CorpusFormat { tsv, jsonl };

inline CorpusFormat parse_corpus_format(const std::string& s) {
  if (s == "tsv") return CorpusFormat::tsv;
  if (s == "jsonl") return CorpusFormat::jsonl;
  throw ContractError("unknown corpus format '" + s + "' (expected tsv or jsonl)");
}

inline CorpusFormat guess_corpus_format(const std::string& path) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  return (ext == "jsonl" || ext == "json") ? CorpusFormat::jsonl : CorpusFormat::tsv;
}

/// TSV: one article per line, "headline<TAB>first paragraph". Blank lines
/// are skipped.
inline std::vector<RawArticle> read_tsv(std::istream& in, const std::string& name = "tsv") {
  std::vector<RawArticle> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(name + ":" + std::to_string(lineno) + ": expected headline<TAB>text");
    }
    out.push_back({std::nullopt, line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

/// JSONL: {"date": "YYYY-MM-DD", "headline": "...", "body": "..."} per line;
/// the date is optional.
inline std::vector<RawArticle> read_jsonl(std::istream& in, const std::string& name = "jsonl") {
  std::vector<RawArticle> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    if (!j.is_object()) throw DataError(where + ": record is not an object");
    RawArticle a;
    try {
      a.headline = j.value("headline", std::string());
      a.body = j.value("body", std::string());
      if (j.contains("date") && !j["date"].is_null()) {
        a.date = parse_date(j["date"].get<std::string>());
        if (!a.date) throw DataError(where + ": unparseable date");
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    out.push_back(std::move(a));
  }
  return out;
}

inline std::vector<RawArticle> read_corpus_file(const std::string& path, CorpusFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return format == CorpusFormat::tsv ? read_tsv(in, path) : read_jsonl(in, path);
}

// ----------------------------------------------------- dataset container

inline constexpr char kDatasetMagic[] = "HLDS";
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

inline void write_ids(BinaryWriter& w, const std::vector<TokenId>& ids) {
  w.u32(static_cast<std::uint32_t>(ids.size()));
  for (TokenId id : ids) w.u32(id);
}

inline std::vector<TokenId> read_ids(BinaryReader& r, std::size_t vocab) {
  const std::uint32_t n = r.u32();
  if (n == 0 || n > (1u << 20)) throw DataError("dataset: bad sequence length");
  std::vector<TokenId> ids(n);
  for (auto& id : ids) {
    id = r.u32();
    if (id >= vocab) throw DataError("dataset: token id outside the vocabulary");
  }
  if (ids.back() != kEosId) throw DataError("dataset: sequence does not end in eos");
  return ids;
}

}  // namespace detail

inline void write_dataset(std::ostream& os, const PreparedDataset& ds) {
  BinaryWriter w(os);
  w.bytes(std::string(kDatasetMagic, 4));
  w.u32(kDatasetVersion);
  w.u64(ds.options.vocab_size);
  w.u64(ds.options.max_headline);
  w.u64(ds.options.max_text);
  w.u64(ds.options.seed);
  for (std::uint64_t v : {ds.stats.total, ds.stats.accepted, ds.stats.no_headline, ds.stats.no_text,
                          ds.stats.headline_too_long, ds.stats.text_too_long, ds.stats.train, ds.stats.gap,
                          ds.stats.holdout}) {
    w.u64(v);
  }
  ds.vocab.write(w);
  for (const auto* split : {&ds.train, &ds.holdout}) {
    w.u64(split->size());
    for (const auto& ex : *split) {
      detail::write_ids(w, ex.input_ids);
      detail::write_ids(w, ex.target_ids);
    }
  }
}

inline PreparedDataset read_dataset(std::istream& is, const std::string& name = "dataset") {
  BinaryReader r(is, name);
  r.expect_magic(std::string(kDatasetMagic, 4));
  if (r.u32() != kDatasetVersion) throw DataError(name + ": unsupported dataset version");
  PreparedDataset ds;
  ds.options.vocab_size = r.u64();
  ds.options.max_headline = r.u64();
  ds.options.max_text = r.u64();
  ds.options.seed = r.u64();
  for (std::uint64_t* v : {&ds.stats.total, &ds.stats.accepted, &ds.stats.no_headline, &ds.stats.no_text,
                           &ds.stats.headline_too_long, &ds.stats.text_too_long, &ds.stats.train, &ds.stats.gap,
                           &ds.stats.holdout}) {
    *v = r.u64();
  }
  ds.vocab = Vocabulary::read(r);
  for (auto* split : {&ds.train, &ds.holdout}) {
    const std::uint64_t n = r.u64();
    for (std::uint64_t k = 0; k < n; ++k) {
      Example ex;
      ex.input_ids = detail::read_ids(r, ds.vocab.size());
      ex.target_ids = detail::read_ids(r, ds.vocab.size());
      split->push_back(std::move(ex));
    }
  }
  return ds;
}

inline void save_dataset(const std::string& path, const PreparedDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  write_dataset(os, ds);
  if (!os) throw DataError("write failed for " + path);
}

inline PreparedDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return read_dataset(is, path);
}

}  // namespace headline
