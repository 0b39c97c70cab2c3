// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "headline/headline.hpp"
#include "test_support.hpp"

using namespace headline;
using namespace headline::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail.clear();
    pass = false;
    detail += (detail.empty() ? "" : "; ") + why;
  }
  void note(const std::string& s) {
    if (pass) detail += (detail.empty() ? "" : "; ") + s;
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<std::uint64_t> target_counts(const std::vector<Example>& data, std::size_t vocab) {
  std::vector<std::uint64_t> counts(vocab, 1);
  for (const auto& e : data)
    for (TokenId t : e.target_ids) ++counts[t];
  return counts;
}

// ------------------------------------------------------------------ 1

Outcome gradient_correctness() {
  Outcome o;
  for (auto mode : {AttentionMode::simple, AttentionMode::complex}) {
    auto p = random_params<double>(tiny_arch(mode, 2, 6, 10, 6, 2), 11);
    std::mt19937_64 rng(12);
    const auto ex = random_example(4, 3, 10, rng);
    const auto r = check_model_gradient(p, ex);
    const std::string tag = to_string(mode) + " max rel err " + fmt(r.max_relative_error) + " over " +
                            std::to_string(r.num_checked) + " coords";
    if (!(r.max_relative_error < 1e-4)) o.fail(tag);
    o.note(tag);
  }
  return o;
}

// ------------------------------------------------------------------ 2

Outcome attention_normalization() {
  Outcome o;
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> len(1, 12);
  double worst_sum = 0, worst_single = 0;
  for (auto mode : {AttentionMode::simple, AttentionMode::complex}) {
    for (int k = 0; k < 1000; ++k) {
      // alternate between random models and extreme-magnitude raw states
      const std::size_t T = k % 10 == 0 ? 1 : len(rng);
      std::vector<double> w;
      if (k % 2 == 0) {
        const auto p = random_params<double>(tiny_arch(mode, 2, 6, 10, 6, 2), 1000 + k, 2.0);
        const auto in = random_sequence(T - 1, 10, rng);
        const auto enc = encode<double>(in, p);
        const AttentionMemory<double> mem(enc, p.arch.attention());
        const auto step = decoder_step<double>(p, mem, enc.final_state(), kEosId);
        w = step.weights;
      } else {
        const AttentionConfig cfg{mode, 6, 2};
        std::normal_distribution<double> g(0.0, 30.0);
        std::vector<std::vector<double>> keys(T, std::vector<double>(6));
        for (auto& key : keys)
          for (auto& x : key) x = g(rng);
        std::vector<double> query(6);
        for (auto& x : query) x = g(rng);
        std::vector<std::vector<double>> parts;
        for (const auto& key : keys) {
          const auto s = split_state<double>(key, cfg).attention;
          parts.emplace_back(s.begin(), s.end());
        }
        const auto q = split_state<double>(query, cfg).attention;
        w = attention_weights(parts, std::vector<double>(q.begin(), q.end())).weights;
      }
      const double sum = std::accumulate(w.begin(), w.end(), 0.0);
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      if (w.size() != T) o.fail("weight vector length " + std::to_string(w.size()) + " for T=" + std::to_string(T));
      if (T == 1) worst_single = std::max(worst_single, std::abs(w[0] - 1.0));
    }
  }
  if (!(worst_sum <= 1e-6)) o.fail("sum deviates by " + fmt(worst_sum));
  if (!(worst_single <= 1e-9)) o.fail("single position deviates by " + fmt(worst_single));
  o.note("2000 instances, max |sum-1| " + fmt(worst_sum) + ", max single-position |w-1| " + fmt(worst_single));
  return o;
}

// ------------------------------------------------------------------ 3

Outcome memorization() {
  Outcome o;
  const auto data = memorization_corpus(40, 7);
  Arch a = tiny_arch(AttentionMode::simple, 2, 32, 40, 16, 8);
  a.max_in = 10;
  a.max_out = 8;
  a.init_range = 0.1;
  TrainConfig c;
  c.epochs = 200;
  c.batch_size = 4;
  c.halve_after_epoch = 150;
  c.halve_interval = 25;
  c.threads = 1;
  c.log_wall_time = false;
  c.evaluate_bleu = false;
  c.seed = 1;
  Trainer<float> trainer(c, init_params<float>(a, target_counts(data, 40), 1), data, {});
  MetricLog log;
  trainer.run(log);
  const double loss = holdout_loss<float>(Batch::from_examples(data), trainer.params(), 1);
  int exact = 0;
  for (const auto& e : data) exact += greedy_headline<float>(trainer.params(), e.input_ids) == strip_eos(e.target_ids);
  if (!(loss < 0.1)) o.fail("per-token train loss " + fmt(loss));
  if (exact < 18) o.fail("greedy exact " + std::to_string(exact) + "/20");
  o.note("200 epochs, per-token train loss " + fmt(loss) + ", greedy exact " + std::to_string(exact) + "/20");
  return o;
}

// ------------------------------------------------------------------ 4

double copy_accuracy(AttentionMode mode, std::uint64_t seed) {
  const CopyTask task;
  std::mt19937_64 rng(seed);
  const auto train = task.sample(2000, rng);
  const auto test = task.sample(200, rng);
  Arch a = tiny_arch(mode, 1, 32, task.vocab(), 16, 8);
  a.max_in = task.length + 1;
  a.max_out = 4;
  a.init_range = 0.1;
  TrainConfig c;
  c.epochs = 10;
  c.batch_size = 32;
  c.halve_after_epoch = 8;
  c.threads = 1;
  c.log_wall_time = false;
  c.evaluate_bleu = false;
  c.seed = seed;
  Trainer<float> trainer(c, init_params<float>(a, target_counts(train, task.vocab()), seed), train, {});
  MetricLog log;
  trainer.run(log);
  int ok = 0;
  for (const auto& e : test) ok += greedy_headline<float>(trainer.params(), e.input_ids) == strip_eos(e.target_ids);
  return ok / double(test.size());
}

Outcome attention_utility() {
  Outcome o;
  std::string table;
  double mean_simple = 0, mean_complex = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const double s = copy_accuracy(AttentionMode::simple, seed);
    const double c = copy_accuracy(AttentionMode::complex, seed);
    const double n = copy_accuracy(AttentionMode::none, seed);
    mean_simple += s / 3;
    mean_complex += c / 3;
    std::printf("  recall seed %llu: simple %.3f complex %.3f none %.3f\n", static_cast<unsigned long long>(seed), s,
                c, n);
    if (!(s >= 0.9)) o.fail("simple " + fmt(s) + " seed " + std::to_string(seed));
    if (!(c >= 0.9)) o.fail("complex " + fmt(c) + " seed " + std::to_string(seed));
    if (!(n < 0.6)) o.fail("none " + fmt(n) + " seed " + std::to_string(seed));
  }
  std::printf("  recall comparison (logged, not gated): simple mean %.3f vs complex mean %.3f\n", mean_simple,
              mean_complex);
  o.note("3 seeds, 10 epochs each; simple mean " + fmt(mean_simple) + ", complex mean " + fmt(mean_complex));
  return o;
}

// ------------------------------------------------------------------ 5

Outcome beam_optimality() {
  Outcome o;
  std::mt19937_64 rng(51);
  for (int k = 0; k < 50; ++k) {
    const auto m = LookupTableModel::random(3, 3, rng);
    const auto all = enumerate_all(m, 3);
    const auto best = *std::max_element(all.begin(), all.end(), [](const auto& a, const auto& b) {
      if (a.log_prob != b.log_prob) return a.log_prob < b.log_prob;
      return a.tokens > b.tokens;
    });
    const auto top = beam_search(m, BeamConfig{27, 3}).front();
    if (top.tokens != best.tokens || top.log_prob != best.log_prob) {
      o.fail("lookup model " + std::to_string(k) + " differs from exhaustive optimum");
    }
  }
  for (int k = 0; k < 100; ++k) {
    auto arch = tiny_arch(k % 2 ? AttentionMode::simple : AttentionMode::complex, 2, 6, 10, 6, 2);
    arch.max_out = 8;
    const auto p = random_params<double>(arch, 5000 + k, 1.0);
    const auto enc = encode<double>(random_sequence(1 + k % 6, 10, rng), p);
    NeuralStepModel<double> m(p, enc);
    if (beam_search<double>(enc, p, BeamConfig{1, 8}).front().tokens != greedy_decode(m, 8)) {
      o.fail("neural model " + std::to_string(k) + ": B=1 differs from greedy");
    }
  }
  o.note("50 lookup models B=27 == exhaustive, 100 neural models B=1 == greedy");
  return o;
}

// ------------------------------------------------------------------ 6

Outcome bleu_oracle() {
  Outcome o;
  std::mt19937_64 rng(61);
  std::uniform_int_distribution<std::size_t> n(1, 8), len(0, 12);
  std::uniform_int_distribution<TokenId> tok(1, 6);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    std::vector<std::vector<TokenId>> hyps, refs;
    const std::size_t count = n(rng);
    for (std::size_t i = 0; i < count; ++i) {
      std::vector<TokenId> h(len(rng)), r(len(rng) + 1);
      for (auto& t : h) t = tok(rng);
      for (auto& t : r) t = tok(rng);
      hyps.push_back(h);
      refs.push_back(r);
    }
    const auto got = corpus_bleu(hyps, refs);
    const auto want = brute_force_bleu(hyps, refs);
    worst = std::max(worst, std::abs(got.bleu - want.bleu));
    for (int m = 0; m < 4; ++m) worst = std::max(worst, std::abs(got.per_n_precision[m] - want.precisions[m]));
  }
  if (!(worst <= 1e-9)) o.fail("max deviation from brute force " + fmt(worst));
  // "the the the" against "the cat"
  const auto hand = corpus_bleu({{5, 5, 5}}, {{5, 6}});
  const auto hand_oracle = brute_force_bleu({{5, 5, 5}}, {{5, 6}});
  if (hand.per_n_precision[0] != 1.0 / 3.0 || hand_oracle.precisions[0] != 1.0 / 3.0 || hand.bleu != 0.0) {
    o.fail("clipped hand case: p1 " + fmt(hand.per_n_precision[0]) + ", bleu " + fmt(hand.bleu));
  }
  o.note("100 corpora, max deviation " + fmt(worst) + "; hand case p1 = 1/3, bleu 0");
  return o;
}

// ------------------------------------------------------------------ 7

Outcome optimizer_oracle() {
  Outcome o;
  std::vector<double> w{0.0}, g{1.0}, cache{0.0}, step{0.0};
  const RmsPropHyper h;
  // hand evaluation of cache <- d*cache + (1-d)g^2; step <- m*step - lr*g/sqrt(cache+eps)
  const double step1 = -0.01 / std::sqrt(0.1 + 1e-8);
  const double step2 = 0.9 * step1 - 0.01 / std::sqrt(0.19 + 1e-8);
  rmsprop_update<double>(w, g, cache, step, h, 0.01);
  const double got1 = step[0];
  rmsprop_update<double>(w, g, cache, step, h, 0.01);
  const double got2 = step[0];
  if (!(std::abs(got1 - step1) <= 1e-6 && std::abs(got1 - (-0.031623)) <= 1e-6)) o.fail("first step " + fmt(got1));
  if (!(std::abs(got2 - step2) <= 1e-6)) o.fail("second step " + fmt(got2) + " vs " + fmt(step2));

  TrainConfig c;
  const std::vector<double> want{0.01, 0.01, 0.01, 0.01, 0.01, 0.005, 0.0025, 0.00125, 0.000625};
  for (std::size_t e = 1; e <= 9; ++e) {
    if (std::abs(lr_for_epoch(e, c) - want[e - 1]) > 1e-15) o.fail("lr for epoch " + std::to_string(e));
  }
  o.note("steps " + fmt(got1) + ", " + fmt(got2) + " (hand formula " + fmt(step1) + ", " + fmt(step2) +
         "); lr schedule matches");
  return o;
}

// ------------------------------------------------------------------ 8

Outcome sampling_rate() {
  Outcome o;
  const auto arch = tiny_arch(AttentionMode::simple, 1, 6, 10, 6, 2);
  const auto p = random_params<float>(arch, 81);
  std::mt19937_64 rng(82);
  std::vector<Example> data;
  for (int k = 0; k < 1100; ++k) data.push_back(random_example(5, 11, 10, rng));
  std::size_t decisions = 0, sampled = 0;
  for (std::size_t lo = 0; lo < data.size(); lo += 100) {
    const auto batch = Batch::from_examples(std::span<const Example>(data).subspan(lo, 100));
    const auto r = batch_forward_backward<float>(batch, 0.1, 83 + lo, p, 1);
    decisions += r.feed_decisions;
    sampled += r.sampled_feeds;
  }
  const double frac = sampled / double(decisions);
  if (decisions < 10000) o.fail("only " + std::to_string(decisions) + " decisions");
  if (!(frac >= 0.08 && frac <= 0.12)) o.fail("sampled fraction " + fmt(frac));
  o.note(std::to_string(sampled) + " of " + std::to_string(decisions) + " steps fed the model's own output (" +
         fmt(frac) + ")");
  return o;
}

// ------------------------------------------------------------------ 9

Outcome pipeline_fidelity() {
  Outcome o;
  for (const auto& problem : check_crafted_corpus()) o.fail(problem);
  o.note("partition, vocabulary, ids and unk substitutions match the hand derivation");
  return o;
}

// ----------------------------------------------------------------- 10

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism_and_persistence() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "headline_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);

  const auto data = memorization_corpus(40, 9);
  const std::vector<Example> train(data.begin(), data.begin() + 16), holdout(data.begin() + 16, data.end());
  Arch a = tiny_arch(AttentionMode::simple, 2, 12, 40, 8, 4);
  a.max_in = 10;
  a.max_out = 8;
  TrainConfig c;
  c.epochs = 4;
  c.batch_size = 5;
  c.threads = 2;
  c.log_wall_time = false;
  c.eval_beam = BeamConfig{2, 6};
  c.seed = 4;
  const auto init = init_params<float>(a, target_counts(train, 40), 4);
  Vocabulary vocab;
  for (std::size_t k = 2; k < 40; ++k) vocab.add("w" + std::to_string(k), 1);

  auto checkpoint_of = [&](const Trainer<float>& t, const MetricLog& log) {
    return Checkpoint<float>{t.params(), vocab, "seed=4\n", t.optimizer(),
                             {t.epochs_completed(), t.global_step(), t.rng_state(), log.offset()}};
  };

  // two uninterrupted runs
  for (const char* name : {"a.jsonl", "b.jsonl"}) {
    Trainer<float> t(c, init, train, holdout);
    MetricLog log((dir / name).string());
    t.run(log);
    save_checkpoint((dir / (std::string(name) + ".ckpt")).string(), checkpoint_of(t, log));
  }
  if (slurp(dir / "a.jsonl") != slurp(dir / "b.jsonl")) o.fail("equal seeds gave different metric logs");

  // interrupted after epoch 2, resumed from the saved checkpoint
  {
    TrainConfig first = c;
    first.stop_after_epoch = 2;
    Trainer<float> t(first, init, train, holdout);
    MetricLog log((dir / "r.jsonl").string());
    t.run(log);
    save_checkpoint((dir / "mid.ckpt").string(), checkpoint_of(t, log));
  }
  {
    const auto ck = load_checkpoint<float>((dir / "mid.ckpt").string());
    Trainer<float> t(c, ck.params, train, holdout);
    t.restore(*ck.optimizer, ck.progress.epochs_completed, ck.progress.global_step, ck.progress.rng_state);
    MetricLog log((dir / "r.jsonl").string(), ck.progress.metric_log_offset);
    t.run(log);
    save_checkpoint((dir / "r.jsonl.ckpt").string(), checkpoint_of(t, log));
  }
  if (slurp(dir / "a.jsonl") != slurp(dir / "r.jsonl")) o.fail("resumed metric log differs");
  if (slurp(dir / "a.jsonl.ckpt") != slurp(dir / "r.jsonl.ckpt")) o.fail("resumed final checkpoint differs");

  // round trip
  const auto ck = load_checkpoint<float>((dir / "a.jsonl.ckpt").string());
  std::stringstream again;
  write_checkpoint(again, ck);
  if (again.str() != slurp(dir / "a.jsonl.ckpt")) o.fail("checkpoint re-serialization differs");
  const auto records = read_metric_log((dir / "a.jsonl").string());
  o.note(std::to_string(records.size()) + " log records identical across runs and after resume; checkpoint " +
         std::to_string(again.str().size()) + " bytes round-trips bitwise");
  fs::remove_all(dir);
  return o;
}

// ----------------------------------------------------------------- 11

Outcome introspection_sanity() {
  Outcome o;
  const auto arch = tiny_arch(AttentionMode::simple, 2, 6, 10, 6, 2);
  const std::vector<std::uint64_t> counts{3, 1, 9, 4, 4, 7, 2, 8, 5, 6};
  const auto p = init_params<double>(arch, counts, 111);
  std::vector<TokenId> unigram(10);
  std::iota(unigram.begin(), unigram.end(), TokenId{0});
  std::stable_sort(unigram.begin(), unigram.end(), [&](TokenId x, TokenId y) { return counts[x] > counts[y]; });
  auto ids = [](const WordProjection& wp) {
    std::vector<TokenId> out;
    for (const auto& e : wp.entries) out.push_back(e.token);
    return out;
  };
  const std::vector<double> zero(4, 0.0);
  if (ids(decoder_hidden_words<double>(zero, p.projection, 10)) != unigram) o.fail("decoder projection order");
  if (ids(context_words<double>(zero, p.projection, 10)) != unigram) o.fail("context projection order");
  if (ids(encoder_position_words<double>(zero, p.projection, 10)) != unigram) o.fail("encoder projection order");

  std::mt19937_64 rng(112);
  double worst_row = 0, worst_linear = 0;
  for (int k = 0; k < 40; ++k) {
    const auto q = random_params<double>(tiny_arch(k % 2 ? AttentionMode::simple : AttentionMode::complex), 200 + k);
    const auto in = random_sequence(1 + k % 7, 10, rng);
    const auto tr = trace_decode<double>(q, in, BeamConfig{2, 6}, 3);
    for (const auto& row : tr.attention.weights)
      worst_row = std::max(worst_row, std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0));

    const auto enc = encode<double>(in, q);
    const AttentionMemory<double> mem(enc, q.arch.attention());
    const auto step = decoder_step<double>(q, mem, enc.final_state(), kEosId);
    const auto mixed = context_scores<double>(std::span<const double>(step.context), q.projection);
    std::vector<double> avg(10, 0.0);
    for (std::size_t t = 0; t < in.size(); ++t) {
      const auto s = context_scores<double>(mem.values[t], q.projection);
      for (std::size_t w = 0; w < 10; ++w) avg[w] += step.weights[t] * (s[w] - q.projection.b_o[w]);
    }
    for (std::size_t w = 0; w < 10; ++w)
      worst_linear = std::max(worst_linear, std::abs(mixed[w] - (avg[w] + q.projection.b_o[w])));
  }
  if (!(worst_row <= 1e-6)) o.fail("trace row sum off by " + fmt(worst_row));
  if (!(worst_linear <= 1e-5)) o.fail("linearity off by " + fmt(worst_linear));
  o.note("zero-state projections follow b_o; 40 traces max |row sum-1| " + fmt(worst_row) + "; linearity gap " +
         fmt(worst_linear));
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double budget_seconds;  // 0 = no runtime bound
  };
  const std::vector<Criterion> criteria{
      {"gradient correctness", gradient_correctness, 60},
      {"attention normalization", attention_normalization, 0},
      {"overfitting memorization", memorization, 600},
      {"attention utility on recall task", attention_utility, 0},
      {"beam-search optimality", beam_optimality, 0},
      {"BLEU oracle", bleu_oracle, 0},
      {"optimizer oracle", optimizer_oracle, 0},
      {"scheduled sampling rate", sampling_rate, 0},
      {"pipeline fidelity", pipeline_fidelity, 0},
      {"determinism and persistence", determinism_and_persistence, 0},
      {"introspection sanity", introspection_sanity, 0},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].run();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (criteria[k].budget_seconds > 0 && secs > criteria[k].budget_seconds)
      o.fail("took " + fmt(secs) + " s, budget " + fmt(criteria[k].budget_seconds) + " s");
    failures += !o.pass;
    std::printf("%s criterion %zu (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
