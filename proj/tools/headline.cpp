// Command-line front end: preprocess, train, generate, evaluate, inspect,
// plot-data. Exit codes: 0 ok, 1 usage, 2 data, 3 numeric divergence.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "headline/headline.hpp"

namespace fs = std::filesystem;
using namespace headline;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::size_t> threads;
  std::optional<std::uint64_t> seed;
};

/// Defaults, then the config file, then --set, then dedicated flags.
RunConfig build_config(const GlobalOptions& g, const std::string& base_text = "") {
  RunConfig cfg;
  if (!base_text.empty()) cfg.merge_text(base_text);
  std::string path = g.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnvVar)) path = env;
  }
  if (!path.empty()) cfg.merge_file(path);
  for (const auto& a : g.overrides) cfg.set_assignment(a);
  if (g.threads) cfg.set("threads", std::to_string(*g.threads));
  if (g.seed) cfg.set("seed", std::to_string(*g.seed));
  return cfg;
}

std::string read_text(const std::string& path) {
  if (path == "-") {
    std::stringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Articles for generate/inspect: either --text, or a file with one article
/// per non-blank line.
std::vector<std::string> read_articles(const std::string& text, const std::string& input) {
  if (!text.empty()) return {text};
  require(!input.empty(), "give --text or --input");
  std::vector<std::string> out;
  std::istringstream in(read_text(input));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) out.push_back(line);
  }
  if (out.empty()) throw DataError("no articles in " + input);
  return out;
}

std::string checkpoint_name(std::size_t epoch) {
  std::ostringstream os;
  os << "ckpt-epoch-" << std::setw(4) << std::setfill('0') << epoch << ".bin";
  return os.str();
}

void prune_checkpoints(const fs::path& dir, std::size_t keep) {
  if (keep == 0) return;
  static const std::regex pattern(R"(ckpt-epoch-\d{4,}\.bin)");
  std::vector<fs::path> found;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (std::regex_match(e.path().filename().string(), pattern)) found.push_back(e.path());
  }
  std::sort(found.begin(), found.end());
  while (found.size() > keep) {
    fs::remove(found.front());
    found.erase(found.begin());
  }
}

// ------------------------------------------------------------ preprocess

struct PreprocessArgs {
  std::vector<std::string> inputs;
  std::string output;
  std::optional<std::size_t> vocab_size, max_headline, max_text;
  std::string format;
};

int cmd_preprocess(const GlobalOptions& g, const PreprocessArgs& a) {
  RunConfig cfg = build_config(g);
  if (a.vocab_size) cfg.set("vocab_size", std::to_string(*a.vocab_size));
  if (a.max_headline) cfg.set("max_headline", std::to_string(*a.max_headline));
  if (a.max_text) cfg.set("max_text", std::to_string(*a.max_text));
  if (!a.format.empty()) cfg.set("format", a.format);

  std::vector<RawArticle> articles;
  for (const auto& path : a.inputs) {
    const std::string f = cfg.get("format");
    const CorpusFormat format = f == "auto" ? guess_corpus_format(path) : parse_corpus_format(f);
    auto more = read_corpus_file(path, format);
    articles.insert(articles.end(), more.begin(), more.end());
  }
  if (articles.empty()) throw DataError("no articles in input");
  const auto ds = prepare(articles, cfg.prepare_options());
  if (ds.train.empty()) throw DataError("no article survived filtering into the training split");
  save_dataset(a.output, ds);

  const auto& s = ds.stats;
  std::cout << "total\t" << s.total << "\naccepted\t" << s.accepted << "\nno_headline\t" << s.no_headline
            << "\nno_text\t" << s.no_text << "\nheadline_too_long\t" << s.headline_too_long << "\ntext_too_long\t"
            << s.text_too_long << "\ntrain\t" << s.train << "\ngap\t" << s.gap << "\nholdout\t" << s.holdout
            << "\nvocabulary\t" << ds.vocab.size() << "\n";
  return 0;
}

// ----------------------------------------------------------------- train

struct TrainArgs {
  std::string dataset;
  std::string out_dir;
  std::string resume;
  std::string attention;
  std::optional<std::size_t> epochs;
  std::size_t stop_after_epoch = 0;
};

template <class Real>
int run_training(RunConfig cfg, const PreparedDataset& ds, const TrainArgs& a,
                 std::optional<Checkpoint<Real>> resumed) {
  const Arch arch = cfg.arch(ds.vocab.size());
  TrainConfig tc = cfg.train();
  tc.stop_after_epoch = a.stop_after_epoch;

  ModelParams<Real> params = resumed ? resumed->params : init_params<Real>(arch, ds.vocab.smoothed_counts(), tc.seed);
  Trainer<Real> trainer(tc, std::move(params), ds.train, ds.holdout);

  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  const std::string log_path = (dir / "metrics.jsonl").string();
  std::optional<std::uint64_t> offset;
  if (resumed) {
    trainer.restore(resumed->optimizer ? *resumed->optimizer : OptimizerState<Real>::fresh(arch, tc.optimizer),
                    resumed->progress.epochs_completed, resumed->progress.global_step, resumed->progress.rng_state);
    offset = resumed->progress.metric_log_offset;
  }
  MetricLog log(log_path, offset);

  const std::string config_text = cfg.to_text();
  const std::size_t keep = cfg.count("keep_checkpoints");
  trainer.run(log, [&](const Trainer<Real>& t, MetricLog& l) {
    Checkpoint<Real> ck{t.params(), ds.vocab, config_text, t.optimizer(),
                        {t.epochs_completed(), t.global_step(), t.rng_state(), l.offset()}};
    save_checkpoint((dir / checkpoint_name(t.epochs_completed())).string(), ck);
    prune_checkpoints(dir, keep);
    const auto& rec = l.records().back();
    std::cerr << "epoch " << t.epochs_completed() << " step " << t.global_step() << " holdout loss " << rec.loss;
    if (rec.bleu) std::cerr << " bleu " << *rec.bleu;
    std::cerr << "\n";
  });
  return 0;
}

int cmd_train(const GlobalOptions& g, const TrainArgs& a) {
  const PreparedDataset ds = load_dataset(a.dataset);
  if (ds.train.empty()) throw DataError(a.dataset + ": empty training split");

  std::string base;
  if (!a.resume.empty()) base = load_checkpoint<double>(a.resume).config_text;
  RunConfig cfg = build_config(g, base);
  if (!a.attention.empty()) cfg.set("attention", a.attention);
  if (a.epochs) cfg.set("epochs", std::to_string(*a.epochs));

  if (!a.resume.empty()) {
    const auto header = peek_checkpoint(a.resume);
    if (!(header.arch == cfg.arch(header.arch.vocab)))
      throw ContractError("--resume: configuration changes the checkpoint's architecture");
    if (header.precision_bits != cfg.precision())
      throw ContractError("--resume: configuration changes the checkpoint's precision");
  }
  if (cfg.precision() == 64) {
    std::optional<Checkpoint<double>> r;
    if (!a.resume.empty()) r = load_checkpoint<double>(a.resume);
    if (r && !(r->vocab == ds.vocab)) throw DataError("dataset vocabulary differs from the checkpoint's");
    return run_training<double>(cfg, ds, a, std::move(r));
  }
  std::optional<Checkpoint<float>> r;
  if (!a.resume.empty()) r = load_checkpoint<float>(a.resume);
  if (r && !(r->vocab == ds.vocab)) throw DataError("dataset vocabulary differs from the checkpoint's");
  return run_training<float>(cfg, ds, a, std::move(r));
}

// --------------------------------------------------- checkpoint commands

/// Loads a checkpoint at its stored precision and calls fn(checkpoint, cfg).
template <class Fn>
int with_checkpoint(const GlobalOptions& g, const std::string& path, Fn&& fn) {
  const auto header = peek_checkpoint(path);
  if (header.precision_bits == 64) {
    auto ck = load_checkpoint<double>(path);
    return fn(ck, build_config(g, ck.config_text));
  }
  auto ck = load_checkpoint<float>(path);
  return fn(ck, build_config(g, ck.config_text));
}

struct DecodeArgs {
  std::string checkpoint;
  std::string text;
  std::string input;
  std::optional<std::size_t> beams;
  std::optional<std::size_t> max_len;
};

BeamConfig beam_from(RunConfig cfg, const DecodeArgs& a) {
  if (a.beams) cfg.set("beams", std::to_string(*a.beams));
  if (a.max_len) cfg.set("beam_max_len", std::to_string(*a.max_len));
  return cfg.beam();
}

int cmd_generate(const GlobalOptions& g, const DecodeArgs& a) {
  const auto articles = read_articles(a.text, a.input);
  return with_checkpoint(g, a.checkpoint, [&](const auto& ck, const RunConfig& cfg) {
    using Real = typename std::decay_t<decltype(ck.params)>::value_type;
    const BeamConfig beam = beam_from(cfg, a);
    for (const auto& article : articles) {
      const auto ids = article_to_ids(article, ck.vocab);
      if (ids.empty()) throw DataError("article has no tokens: '" + article + "'");
      auto out = generate<Real>(article, ck.params, ck.vocab, beam);
      if (!out.empty() && out.back() == ck.vocab.token(kEosId)) out.pop_back();
      std::cout << join_tokens(out) << "\n";
    }
    return 0;
  });
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string dataset;
  std::optional<std::size_t> limit;
  bool no_bleu = false;
};

int cmd_evaluate(const GlobalOptions& g, const EvaluateArgs& a) {
  const PreparedDataset ds = load_dataset(a.dataset);
  if (ds.holdout.empty()) throw DataError(a.dataset + ": empty holdout split");
  return with_checkpoint(g, a.checkpoint, [&](const auto& ck, const RunConfig& cfg) {
    using Real = typename std::decay_t<decltype(ck.params)>::value_type;
    if (!(ck.vocab == ds.vocab)) throw DataError("dataset vocabulary differs from the checkpoint's");
    const std::size_t limit = a.limit.value_or(cfg.count("holdout_eval_size"));
    const auto m = evaluate_model<Real>(ck.params, ds.holdout, limit, cfg.beam(), !a.no_bleu,
                                        cfg.flag("bleu_smoothing"), cfg.count("threads"));
    nlohmann::json j;
    j["examples"] = std::min(limit, ds.holdout.size());
    j["loss"] = m.loss;
    if (m.bleu) {
      const auto& b = *m.bleu;
      j["bleu"] = b.bleu;
      j["precisions"] = b.per_n_precision;
      j["matches"] = b.matches;
      j["totals"] = b.totals;
      j["brevity_penalty"] = b.brevity_penalty;
      j["hyp_length"] = b.hyp_length;
      j["ref_length"] = b.ref_length;
    }
    std::cout << j.dump(2) << "\n";
    return 0;
  });
}

// --------------------------------------------------------------- inspect

struct InspectArgs {
  DecodeArgs decode;
  std::string out_dir;
  std::size_t topk = 10;
  std::vector<std::size_t> units;
};

void write_projections(const fs::path& path, const std::string& index_name, const std::vector<WordProjection>& rows,
                       const Vocabulary& vocab) {
  std::ofstream out(path);
  out << index_name << "\trank\ttoken\tscore\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t r = 0; r < rows[i].entries.size(); ++r) {
      const auto& e = rows[i].entries[r];
      out << i << '\t' << r + 1 << '\t' << vocab.token(e.token) << '\t' << e.score << '\n';
    }
  }
  if (!out) throw DataError("cannot write " + path.string());
}

void write_neurons(const fs::path& path, const std::vector<TokenId>& tokens,
                   const std::vector<std::vector<double>>& values, const std::vector<std::size_t>& units,
                   const Vocabulary& vocab) {
  std::ofstream out(path);
  out << "position\ttoken\tunit\tactivation\n";
  for (std::size_t t = 0; t < values.size(); ++t) {
    for (std::size_t k = 0; k < units.size(); ++k) {
      out << t << '\t' << vocab.token(tokens[t]) << '\t' << units[k] << '\t' << values[t][k] << '\n';
    }
  }
  if (!out) throw DataError("cannot write " + path.string());
}

int cmd_inspect(const GlobalOptions& g, const InspectArgs& a) {
  const auto articles = read_articles(a.decode.text, a.decode.input);
  require(articles.size() == 1, "inspect takes a single article");
  return with_checkpoint(g, a.decode.checkpoint, [&](const auto& ck, const RunConfig& cfg) {
    using Real = typename std::decay_t<decltype(ck.params)>::value_type;
    const BeamConfig beam = beam_from(cfg, a.decode);
    auto ids = article_to_ids(articles[0], ck.vocab);
    if (ids.empty()) throw DataError("article has no tokens");
    if (ids.size() + 1 > ck.params.arch.max_in) ids.resize(ck.params.arch.max_in - 1);
    ids.push_back(kEosId);

    // check the neuron request before writing anything
    if (!a.units.empty()) {
      const auto att = ck.params.arch.attention();
      if (att.mode != AttentionMode::simple) {
        throw UnsupportedModeError("--units requires a simple-attention checkpoint (this one uses " +
                                   to_string(att.mode) + " attention)");
      }
    }
    const auto tr = trace_decode<Real>(ck.params, ids, beam, a.topk);
    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    const auto& V = ck.vocab;
    {
      std::ofstream out(dir / "trace.tsv");
      out << "output\\input";
      for (TokenId t : tr.attention.input_tokens) out << '\t' << V.token(t);
      out << '\n';
      for (std::size_t s = 0; s < tr.attention.weights.size(); ++s) {
        out << V.token(tr.attention.output_tokens[s]);
        for (double w : tr.attention.weights[s]) out << '\t' << w;
        out << '\n';
      }
    }
    write_projections(dir / "decoder_words.tsv", "step", tr.decoder_words, V);
    write_projections(dir / "context_words.tsv", "step", tr.context_words, V);
    write_projections(dir / "encoder_words.tsv", "position", tr.encoder_words, V);

    nlohmann::json summary;
    std::vector<std::string> in_tokens, out_tokens;
    for (TokenId t : tr.attention.input_tokens) in_tokens.push_back(V.token(t));
    for (TokenId t : tr.attention.output_tokens) out_tokens.push_back(V.token(t));
    summary["input"] = in_tokens;
    summary["output"] = out_tokens;
    summary["attention"] = tr.attention.weights;
    summary["attention_mode"] = to_string(ck.params.arch.attention_mode);

    if (!a.units.empty()) {
      const auto rep = neuron_activations<Real>(ck.params, ids, a.units, beam);
      write_neurons(dir / "neurons_encoder.tsv", rep.input_tokens, rep.encoder, rep.units, V);
      write_neurons(dir / "neurons_decoder.tsv", rep.output_tokens, rep.decoder, rep.units, V);
      summary["units"] = rep.units;
      summary["encoder_activations"] = rep.encoder;
      summary["decoder_activations"] = rep.decoder;
    }
    std::ofstream(dir / "summary.json") << summary.dump() << "\n";
    if (!out_tokens.empty() && tr.attention.output_tokens.back() == kEosId) out_tokens.pop_back();
    std::cout << join_tokens(out_tokens) << "\n";
    return 0;
  });
}

// ------------------------------------------------------------- plot-data

/// One row per epoch: mean training loss, then the epoch's last holdout
/// loss and BLEU ("nan" when absent).
int cmd_plot_data(const std::string& metrics, const std::string& out_path) {
  const auto records = read_metric_log(metrics);
  struct Row {
    double train_sum = 0;
    std::size_t train_n = 0;
    std::size_t step = 0;
    std::optional<double> holdout_loss, bleu;
  };
  std::map<std::size_t, Row> rows;
  for (const auto& r : records) {
    Row& row = rows[r.epoch];
    row.step = std::max<std::size_t>(row.step, r.step);
    if (r.split == "train") {
      row.train_sum += r.loss;
      ++row.train_n;
    } else {
      row.holdout_loss = r.loss;
      row.bleu = r.bleu;
    }
  }
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw DataError("cannot write " + out_path);
  }
  std::ostream& out = out_path.empty() ? std::cout : file;
  auto opt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("nan"); };
  out << "epoch\tstep\ttrain_loss\tholdout_loss\tholdout_bleu\n";
  for (const auto& [epoch, row] : rows) {
    const std::optional<double> train =
        row.train_n ? std::optional<double>(row.train_sum / double(row.train_n)) : std::nullopt;
    out << epoch << '\t' << row.step << '\t' << opt(train) << '\t' << opt(row.holdout_loss) << '\t' << opt(row.bleu)
        << '\n';
  }
  return 0;
}

void add_decode_options(CLI::App* cmd, DecodeArgs& a) {
  cmd->add_option("checkpoint", a.checkpoint, "checkpoint file")->required();
  cmd->add_option("--text", a.text, "article text");
  cmd->add_option("--input", a.input, "file with one article per line ('-' for stdin)");
  cmd->add_option("--beams", a.beams, "beam width");
  cmd->add_option("--max-len", a.max_len, "maximum headline length in tokens");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Encoder-decoder LSTM headline generator"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config_path, std::string("key=value config file (default: $") + kConfigEnvVar + ")");
  app.add_option("--set", g.overrides, "override a config key, key=value (repeatable)")
      ->allow_extra_args(false);
  app.add_option("--threads", g.threads, "worker threads (0 = all cores)");
  app.add_option("--seed", g.seed, "random seed");

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "tokenize, filter and split a corpus");
  c_pre->add_option("inputs", pre.inputs, "corpus files (.tsv or .jsonl)")->required();
  c_pre->add_option("-o,--output", pre.output, "prepared dataset file")->required();
  c_pre->add_option("--vocab-size", pre.vocab_size, "number of words kept besides eos and unk");
  c_pre->add_option("--max-headline", pre.max_headline, "maximum headline tokens, eos included");
  c_pre->add_option("--max-text", pre.max_text, "maximum text tokens, eos included");
  c_pre->add_option("--format", pre.format, "tsv, jsonl or auto");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train a model on a prepared dataset");
  c_train->add_option("dataset", tr.dataset, "prepared dataset file")->required();
  c_train->add_option("--out-dir", tr.out_dir, "directory for checkpoints and metrics.jsonl")->required();
  c_train->add_option("--resume", tr.resume, "continue from this checkpoint");
  c_train->add_option("--attention", tr.attention, "none, complex or simple");
  c_train->add_option("--epochs", tr.epochs, "total number of epochs");
  c_train->add_option("--stop-after-epoch", tr.stop_after_epoch, "stop once this many epochs are complete");

  DecodeArgs gen;
  auto* c_gen = app.add_subcommand("generate", "generate headlines for articles");
  add_decode_options(c_gen, gen);

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "holdout loss and BLEU");
  c_eval->add_option("checkpoint", ev.checkpoint, "checkpoint file")->required();
  c_eval->add_option("dataset", ev.dataset, "prepared dataset file")->required();
  c_eval->add_option("--limit", ev.limit, "number of holdout examples used");
  c_eval->add_flag("--no-bleu", ev.no_bleu, "report loss only");

  InspectArgs ins;
  auto* c_ins = app.add_subcommand("inspect", "attention trace, word projections, neuron report");
  add_decode_options(c_ins, ins.decode);
  c_ins->add_option("--out-dir", ins.out_dir, "output directory")->required();
  c_ins->add_option("--topk", ins.topk, "words per projection");
  c_ins->add_option("--units", ins.units, "scoring units to report")->delimiter(',');

  std::string plot_metrics, plot_out;
  auto* c_plot = app.add_subcommand("plot-data", "per-epoch table from a metric log");
  c_plot->add_option("metrics", plot_metrics, "metrics.jsonl")->required();
  c_plot->add_option("-o,--output", plot_out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*c_pre) return cmd_preprocess(g, pre);
    if (*c_train) return cmd_train(g, tr);
    if (*c_gen) return cmd_generate(g, gen);
    if (*c_eval) return cmd_evaluate(g, ev);
    if (*c_ins) return cmd_inspect(g, ins);
    if (*c_plot) return cmd_plot_data(plot_metrics, plot_out);
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
