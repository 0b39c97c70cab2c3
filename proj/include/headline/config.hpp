#pragma once

// Run configuration: a flat key=value file, overridable from the command
// line. Defaults are the published training recipe.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "headline/attention.hpp"
#include "headline/beam_search.hpp"
#include "headline/corpus.hpp"
#include "headline/errors.hpp"
#include "headline/params.hpp"
#include "headline/training.hpp"

namespace headline {

/// Environment variable naming a config file read before command-line flags.
inline constexpr const char* kConfigEnvVar = "HEADLINE_CONFIG";

class RunConfig {
 public:
  enum class Kind { count, real, boolean, text };

  struct Entry {
    std::string key;
    Kind kind;
    std::string value;
  };

  RunConfig()
      : entries_{
            {"layers", Kind::count, "4"},
            {"hidden", Kind::count, "600"},
            {"embed", Kind::count, "600"},
            {"attention", Kind::text, "simple"},
            {"split_size", Kind::count, "50"},
            {"max_headline", Kind::count, "25"},
            {"max_text", Kind::count, "50"},
            {"dropout", Kind::real, "0"},
            {"init_range", Kind::real, "0.1"},
            {"precision", Kind::count, "32"},
            {"epochs", Kind::count, "9"},
            {"halve_after_epoch", Kind::count, "5"},
            {"halve_interval", Kind::count, "1"},
            {"batch_size", Kind::count, "384"},
            {"lr", Kind::real, "0.01"},
            {"rms_decay", Kind::real, "0.9"},
            {"rms_momentum", Kind::real, "0.9"},
            {"rms_epsilon", Kind::real, "1e-8"},
            {"sampling_rate", Kind::real, "0.1"},
            {"clip_norm", Kind::real, "5"},
            {"eval_every", Kind::count, "0"},
            {"holdout_eval_size", Kind::count, "384"},
            {"eval_bleu", Kind::boolean, "true"},
            {"bleu_smoothing", Kind::boolean, "false"},
            {"seed", Kind::count, "1"},
            {"threads", Kind::count, "0"},
            {"log_wall_time", Kind::boolean, "true"},
            {"keep_checkpoints", Kind::count, "2"},
            {"beams", Kind::count, "2"},
            {"beam_max_len", Kind::count, "25"},
            {"length_norm", Kind::boolean, "false"},
            {"suppress_unk", Kind::boolean, "false"},
            {"vocab_size", Kind::count, "40000"},
            {"format", Kind::text, "auto"},
        } {}

  const std::vector<Entry>& entries() const { return entries_; }

  void set(const std::string& key, const std::string& value) {
    Entry& e = find(key);
    check_value(e.kind, key, value);
    e.value = value;
  }

  /// Accepts "key=value".
  void set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos, "config: expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  /// One key=value per line; '#' starts a comment.
  void merge_text(const std::string& text) {
    std::istringstream in(text);
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      try {
        set_assignment(line);
      } catch (const ContractError& e) {
        throw ContractError("config line " + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str());
  }

  std::string to_text() const {
    std::string out;
    for (const auto& e : entries_) out += e.key + "=" + e.value + "\n";
    return out;
  }

  const std::string& get(const std::string& key) const { return find(key).value; }
  std::size_t count(const std::string& key) const { return static_cast<std::size_t>(std::stoull(get(key))); }
  double real(const std::string& key) const { return std::stod(get(key)); }
  bool flag(const std::string& key) const { return get(key) == "true" || get(key) == "1"; }

  Arch arch(std::size_t vocab) const {
    Arch a;
    a.num_layers = count("layers");
    a.hidden = count("hidden");
    a.embed = count("embed");
    a.vocab = vocab;
    a.attention_mode = parse_attention_mode(get("attention"));
    a.split_size = count("split_size");
    a.max_in = count("max_text");
    a.max_out = count("max_headline");
    a.dropout = real("dropout");
    a.init_range = real("init_range");
    a.validate();
    return a;
  }

  BeamConfig beam() const {
    BeamConfig b;
    b.beam_width = count("beams");
    b.max_len = count("beam_max_len");
    b.length_normalization = flag("length_norm");
    b.suppress_unk = flag("suppress_unk");
    b.validate();
    return b;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.epochs = count("epochs");
    t.halve_after_epoch = count("halve_after_epoch");
    t.halve_interval = count("halve_interval");
    t.batch_size = count("batch_size");
    t.sampling_rate = real("sampling_rate");
    t.optimizer = {real("lr"), real("rms_decay"), real("rms_momentum"), real("rms_epsilon")};
    t.clip_norm = real("clip_norm");
    t.seed = count("seed");
    t.eval_every = count("eval_every");
    t.holdout_eval_size = count("holdout_eval_size");
    t.evaluate_bleu = flag("eval_bleu");
    t.bleu_smoothing = flag("bleu_smoothing");
    t.eval_beam = beam();
    t.threads = count("threads");
    t.log_wall_time = flag("log_wall_time");
    t.validate();
    return t;
  }

  PrepareOptions prepare_options() const {
    PrepareOptions o;
    o.vocab_size = count("vocab_size");
    o.max_headline = count("max_headline");
    o.max_text = count("max_text");
    o.seed = count("seed");
    return o;
  }

  int precision() const {
    const std::size_t p = count("precision");
    require(p == 32 || p == 64, "config: precision must be 32 or 64");
    return static_cast<int>(p);
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static void check_value(Kind kind, const std::string& key, const std::string& v) {
    const std::string bad = "config: invalid value '" + v + "' for " + key;
    switch (kind) {
      case Kind::count: {
        require(!v.empty() && v.find_first_not_of("0123456789") == std::string::npos, bad);
        break;
      }
      case Kind::real: {
        std::size_t used = 0;
        try {
          std::stod(v, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        require(!v.empty() && used == v.size(), bad);
        break;
      }
      case Kind::boolean:
        require(v == "true" || v == "false" || v == "1" || v == "0", bad);
        break;
      case Kind::text:
        require(!v.empty(), bad);
        break;
    }
  }

  Entry& find(const std::string& key) {
    for (auto& e : entries_) {
      if (e.key == key) return e;
    }
    throw ContractError("config: unknown key '" + key + "'");
  }
  const Entry& find(const std::string& key) const { return const_cast<RunConfig*>(this)->find(key); }

  std::vector<Entry> entries_;
};

}  // namespace headline
