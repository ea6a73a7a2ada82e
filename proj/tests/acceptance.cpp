// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "lightnmt/bench.hpp"
#include "lightnmt/decoding.hpp"
#include "lightnmt/metrics.hpp"
#include "lightnmt/training.hpp"
#include "model_helpers.hpp"

using namespace lightnmt;
using lightnmt::testing::full_logits;
using lightnmt::testing::random_sequences;
using lightnmt::testing::tiny_config;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double millions(std::size_t n) { return static_cast<double>(n) / 1e6; }

// ---------------------------------------------------------------------------
// 1. Parameter counts

Outcome param_counts() {
  struct Row {
    const char* name;
    ModelConfig cfg;
    double total, enc, dec;
  };
  auto base = ModelConfig::base(70000), big = ModelConfig::big(70000);
  auto base122 = base, big122 = big, multi = big;
  base122.enc_layers = big122.enc_layers = multi.enc_layers = 12;
  base122.dec_layers = big122.dec_layers = multi.dec_layers = 2;
  multi.multi_decoder = true;
  for (int i = 0; i < 20; ++i) multi.languages.push_back("l" + std::to_string(i));
  const std::vector<Row> rows{{"base 6-6", base, 44.1, 18.9, 25.2},
                              {"base 12-2", base122, 46.2, 37.8, 8.4},
                              {"big 6-6", big, 176.4, 75.6, 100.8},
                              {"big 12-2", big122, 184.7, 151.1, 33.6},
                              {"multi-decoder", multi, 823.0, 151.2, 20 * 33.6}};
  double worst = 0;
  std::string worst_name;
  auto check = [&](const std::string& name, double got, double want) {
    const double rel = std::abs(got - want) / want;
    if (rel > worst) {
      worst = rel;
      worst_name = name;
    }
  };
  for (const auto& r : rows) {
    const auto p = count_params(r.cfg);
    check(std::string(r.name) + " total", millions(p.non_embedding()), r.total);
    check(std::string(r.name) + " encoder", millions(p.encoder), r.enc);
    check(std::string(r.name) + " decoder", millions(p.decoder), r.dec);
  }
  check("embeddings", millions(count_params(base).embedding), 36.0);
  return {worst <= 0.01, fmt("max relative deviation %.3f%% (%s)", 100 * worst, worst_name.c_str())};
}

// ---------------------------------------------------------------------------
// 2. Sampling table

Outcome sampling_table() {
  const std::vector<std::tuple<std::string, double, double>> rows{
      {"fr", 95432158, .038}, {"de", 76490492, .036}, {"es", 72973508, .036}, {"it", 38054969, .031},
      {"pt", 29181190, .030}, {"nl", 27361570, .029}, {"nb", 15384700, .026}, {"cs", 12922615, .025},
      {"pl", 12877872, .025}, {"sv", 10969372, .025}, {"da", 9792687, .024},  {"el", 8915258, .024},
      {"fi", 6833568, .022},  {"hr", 6338125, .022},  {"hu", 6294289, .022},  {"bg", 6098653, .022},
      {"ro", 5786263, .022},  {"sk", 4557803, .021},  {"lt", 4033198, .020}};
  std::vector<double> sizes;
  for (const auto& r : rows) sizes.push_back(std::get<1>(r));
  const auto p = temperature_probabilities(sizes, 5.0);
  double worst = 0;
  std::string at;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double d = std::abs(0.5 * p[i] - std::get<2>(rows[i]));
    if (d > worst) {
      worst = d;
      at = std::get<0>(rows[i]);
    }
  }
  return {worst <= 0.002, fmt("max |diff| %.4f (%s); fr %.4f, lt %.4f", worst, at.c_str(), 0.5 * p[0],
                              0.5 * p.back())};
}

// ---------------------------------------------------------------------------
// 3. Cache equivalence

// Greedy decoding that re-runs the full teacher-forced forward pass at every
// step, with no cached state.
std::vector<int> greedy_full_recompute(const ModelWeights<double>& w, const std::vector<int>& src,
                                       std::size_t max_len) {
  std::vector<int> input{kBos}, out;
  while (out.size() < max_len) {
    const auto logits = full_logits(w, w.targets[0], {src}, {input})[0];
    const auto row = logits.row_span(input.size() - 1);
    const int tok = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    out.push_back(tok);
    if (tok == kEos) break;
    input.push_back(tok);
  }
  return out;
}

Outcome cache_equivalence() {
  std::size_t compared = 0, mismatched = 0, tokens = 0;
  for (auto kind : {DecoderKind::kTransformer, DecoderKind::kRecurrent}) {
    for (std::uint64_t m = 0; m < 100; ++m) {
      std::mt19937_64 rng(1000 + m + (kind == DecoderKind::kRecurrent ? 5000 : 0));
      const auto norm = m % 2 ? NormPlacement::kPre : NormPlacement::kPost;
      const auto w = build_model<double>(tiny_config(kind, norm, 16), rng);
      const auto srcs = random_sequences(10, 1, 8, 16, rng);
      DecodeConfig dc;
      dc.beam_size = 1;
      dc.max_len = 10;
      const auto cached = greedy_decode(w, srcs, dc);
      for (std::size_t s = 0; s < srcs.size(); ++s) {
        const auto full = greedy_full_recompute(w, srcs[s], dc.max_len);
        ++compared;
        tokens += full.size();
        if (full != cached[s].tokens) ++mismatched;
      }
    }
  }
  return {mismatched == 0 && compared == 2000,
          fmt("%zu/%zu decodes identical (%zu tokens), both decoder kinds", compared - mismatched, compared,
              tokens)};
}

// ---------------------------------------------------------------------------
// 4. Beam oracle

double sequence_score(const ModelWeights<double>& w, const std::vector<int>& src, const std::vector<int>& seq) {
  std::vector<int> input{kBos};
  input.insert(input.end(), seq.begin(), seq.end() - 1);
  const auto logp = kernels::log_softmax_rows(full_logits(w, w.targets[0], {src}, {input})[0]);
  double s = 0;
  for (std::size_t t = 0; t < seq.size(); ++t) s += logp(t, static_cast<std::size_t>(seq[t]));
  return s;
}

// Best EOS-terminated sequence of at most max_len tokens by enumeration.
std::vector<int> exhaustive_best(const ModelWeights<double>& w, const std::vector<int>& src, std::size_t max_len,
                                 double lp) {
  const int v = static_cast<int>(w.targets[0].size());
  std::vector<int> prefix, best;
  double best_score = -INFINITY;
  std::function<void()> rec = [&] {
    for (int tok = 0; tok < v; ++tok) {
      prefix.push_back(tok);
      if (tok == kEos) {
        const double n = normalized_score(sequence_score(w, src, prefix), prefix.size(), lp);
        if (n > best_score) {
          best_score = n;
          best = prefix;
        }
      } else if (prefix.size() < max_len) {
        rec();
      }
      prefix.pop_back();
    }
  };
  rec();
  return best;
}

Outcome beam_oracle() {
  std::size_t wide_ok = 0, greedy_ok = 0, cases = 0;
  for (std::uint64_t m = 0; m < 50; ++m) {
    std::mt19937_64 rng(7000 + m);
    const auto kind = m % 2 ? DecoderKind::kRecurrent : DecoderKind::kTransformer;
    const std::size_t vocab = 5 + (m / 2) % 2;  // 5 or 6
    const std::size_t max_len = 3 + (m / 4) % 2;  // 3 or 4
    const auto w = build_model<double>(tiny_config(kind, NormPlacement::kPost, vocab), rng);
    const auto srcs = random_sequences(2, 1, 4, vocab, rng);
    DecodeConfig wide;
    wide.max_len = max_len;
    wide.beam_size = static_cast<std::size_t>(std::pow(vocab, max_len));
    const auto ranked = beam_search(w, srcs, wide);
    DecodeConfig one = wide;
    one.beam_size = 1;
    const auto beam1 = beam_search(w, srcs, one);
    const auto greedy = greedy_decode(w, srcs, one);
    for (std::size_t s = 0; s < srcs.size(); ++s) {
      ++cases;
      wide_ok += ranked[s].front().tokens == exhaustive_best(w, srcs[s], max_len, wide.length_penalty);
      greedy_ok += beam1[s].front().tokens == greedy[s].tokens;
    }
  }
  return {wide_ok == cases && greedy_ok == cases,
          fmt("wide beam = exhaustive on %zu/%zu, beam 1 = greedy on %zu/%zu (50 models)", wide_ok, cases,
              greedy_ok, cases)};
}

// ---------------------------------------------------------------------------
// Shared toy-training helpers

TrainConfig toy_train_config(std::uint64_t seed) {
  TrainConfig c;
  c.peak_lr = 2e-3;
  c.warmup_updates = 100;
  c.dropout = 0.0;
  c.label_smoothing = 0.1;
  c.max_tokens = 400;
  c.batch_buffer = 100000;
  c.seed = seed;
  return c;
}

struct FitResult {
  std::size_t steps = 0;
  double accuracy = 0;
};

// Trains until `target` teacher-forced accuracy on `eval` (checked every
// `every` updates) or `max_steps` updates.
template <class T>
FitResult fit(Trainer<T>& trainer, ModelWeights<T>& w, const std::vector<Example>& data,
              const std::vector<Example>& eval, std::size_t max_steps, double target, bool homogeneous,
              std::size_t every = 100) {
  std::mt19937_64 rng(trainer.config().seed ^ 0xabcdefULL);
  FitResult r;
  while (r.steps < max_steps) {
    auto batching = make_batches(data, trainer.config().max_tokens, homogeneous, trainer.config().batch_buffer, rng);
    for (const auto& b : batching.batches) {
      if (r.steps >= max_steps) break;
      trainer.step(b);
      ++r.steps;
      if (r.steps % every == 0) {
        r.accuracy = evaluate(w, eval).accuracy;
        if (r.accuracy > target) return r;
      }
    }
  }
  r.accuracy = evaluate(w, eval).accuracy;
  return r;
}

// ---------------------------------------------------------------------------
// 5. Filtering equivalence

Outcome filtering_equivalence() {
  SyntheticSpec spec;
  spec.languages = {"en", "fr", "de"};
  spec.lines = 300;
  spec.lexicon = 40;
  spec.min_words = 2;
  spec.max_words = 5;
  spec.seed = 5;
  const auto corpus = make_synthetic_corpus(spec);
  std::vector<std::string> text;
  for (const auto& p : corpus.all_pairs()) text.push_back(p.src);
  const auto bpe = learn_bpe(text, 150, corpus.languages());

  ModelConfig mc = tiny_config(DecoderKind::kTransformer, NormPlacement::kPre, bpe.vocab_size());
  mc.d_model = 64;
  mc.ffn_dim = 128;
  mc.n_heads = 4;
  mc.languages = corpus.languages();
  std::mt19937_64 rng(5);
  auto w = build_model<float>(mc, rng);
  const auto data = make_examples(bpe, corpus.all_pairs(), LangCodePosition::kEncoder);
  auto tc = toy_train_config(5);
  tc.max_tokens = 600;
  Trainer<float> trainer(w, tc);
  // "Trained" means the same teacher-forced bar as the toy-training check.
  const auto fitted = fit(trainer, w, data, data, 3000, 0.95, false);

  std::vector<std::vector<int>> srcs;
  for (const auto& [en, fr] : corpus.lines({"en", "fr"})) {
    if (srcs.size() == 200) break;
    srcs.push_back(insert_language_code(bpe, to_ids(bpe, apply_bpe_line(bpe, en)), "fr",
                                        LangCodePosition::kEncoder).src);
  }
  DecodeConfig dc;
  dc.beam_size = 5;
  dc.max_len = 30;
  const auto plain = translate(w, srcs, dc);
  std::vector<int> kept;
  for (std::size_t id = 0; id < bpe.vocab_size(); ++id)
    if (bpe.is_special(static_cast<int>(id))) kept.push_back(static_cast<int>(id));
  for (const auto& h : plain) kept.insert(kept.end(), h.tokens.begin(), h.tokens.end());
  dc.lang_vocab = LangVocab("fr", kept, bpe.vocab_size());
  const auto filtered = translate(w, srcs, dc);
  std::size_t same = 0, nonempty = 0;
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    same += plain[i].tokens == filtered[i].tokens;
    nonempty += !plain[i].output().empty();
  }

  // Constrained BPE: every target token of every training stream is kept.
  std::map<std::string, LangVocab> vocabs;
  for (const auto& lang : corpus.languages()) {
    std::vector<std::string> mono;
    for (const auto& p : corpus.all_pairs())
      if (p.src_lang == lang) mono.push_back(p.src);
    vocabs.emplace(lang, build_lang_vocab(bpe, count_frequencies(bpe, mono, lang), 3, 30));
  }
  const auto constrained = make_examples(bpe, corpus.all_pairs(), LangCodePosition::kEncoder, &vocabs);
  std::size_t outside = 0, outside_plain = 0, stream_tokens = 0;
  for (const auto& ex : constrained)
    for (int t : ex.tgt) {
      ++stream_tokens;
      outside += !vocabs.at(ex.tgt_lang).keeps(t);
    }
  for (const auto& ex : data)
    for (int t : ex.tgt) outside_plain += !vocabs.at(ex.tgt_lang).keeps(t);

  return {same == srcs.size() && outside == 0 && srcs.size() == 200,
          fmt("model at %.3f accuracy after %zu updates; %zu/%zu identical with %zu of %zu tokens kept (%zu "
              "non-empty outputs); constrained streams: %zu of %zu tokens outside LangVocab (unconstrained: %zu)",
              fitted.accuracy, fitted.steps, same, srcs.size(), dc.lang_vocab->size(), bpe.vocab_size(), nonempty, outside, stream_tokens,
              outside_plain)};
}

// ---------------------------------------------------------------------------
// 6. Gradient check

Outcome gradient_check() {
  std::string detail;
  bool pass = true;
  for (auto kind : {DecoderKind::kTransformer, DecoderKind::kRecurrent}) {
    std::mt19937_64 rng(21);
    auto w = build_model<double>(tiny_config(kind, NormPlacement::kPost, 10), rng);
    ToyTaskSpec s;
    s.pairs = 3;
    s.vocab = 10;
    s.min_len = 2;
    s.max_len = 5;
    s.seed = 5;
    const auto batch = make_toy_task(s);
    const auto params = parameters(w);
    std::size_t total = 0;
    for (const auto& p : params) total += p.size();
    const auto report = lightnmt::testing::grad_error_report<double>(
        [&] { return batch_loss(w, batch, 0.1).mean; }, params, 1e-5);
    pass = pass && report.checked == total && report.max_relative < 1e-4;
    detail += fmt("%s%s: max rel %.2e over %zu params", detail.empty() ? "" : "; ",
                  kind == DecoderKind::kTransformer ? "transformer 2-2" : "hybrid", report.max_relative,
                  report.checked);
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 7. Speed trends

// Whole-word vocabulary so every output token is one word.
BpeModel word_vocabulary(std::size_t size) {
  std::vector<std::string> toks{std::string(kPadToken), std::string(kBosToken), std::string(kEosToken),
                                std::string(kUnkToken)};
  for (std::size_t i = toks.size(); i < size; ++i) toks.push_back("w" + std::to_string(i) + std::string(kEndOfWord));
  return BpeModel({}, toks);
}

Outcome speed_trends() {
  const std::size_t vocab = 8000, kept = 1000;
  const auto bpe = word_vocabulary(vocab);
  std::mt19937_64 rng(77);
  auto cfg = ModelConfig::base(vocab);
  cfg.dropout = 0;
  const auto w66 = build_model<float>(cfg, rng);
  const auto w122 = init_deep_shallow(w66, 12, 2);
  const auto srcs = random_sequences(64, 10, 20, vocab, rng);
  DecodeConfig dc;
  dc.beam_size = 5;
  dc.batch_size = 64;
  dc.max_len = 16;

  auto words_of = [&](const std::vector<Hypothesis>& hyps) {
    std::vector<std::string> lines;
    for (const auto& h : hyps) lines.push_back(decode_ids(bpe, h.output()));
    return lines;
  };
  const auto wps66 = measure_wps([&] { return words_of(translate(w66, srcs, dc)); }, 2);
  const auto wps122 = measure_wps([&] { return words_of(translate(w122, srcs, dc)); }, 2);
  const double ratio = wps122.mean_wps / wps66.mean_wps;

  const auto prof = profile(w66, srcs, dc);
  const double dec_enc = prof.decoder / prof.encoder;

  std::vector<int> ids;
  for (std::size_t i = 0; i < kept; ++i) ids.push_back(static_cast<int>(i));
  DecodeConfig fdc = dc;
  fdc.lang_vocab = LangVocab("xx", ids, vocab);
  const auto filt = profile(w66, srcs, fdc);
  const bool c_ok = filt.softmax < prof.softmax && filt.beam_topk < prof.beam_topk;

  const bool pass = !wps66.undefined && !wps122.undefined && ratio >= 1.3 && dec_enc >= 5 && c_ok;
  return {pass, fmt("(a) WPS 12-2/6-6 = %.0f/%.0f = %.2fx; (b) decoder/encoder = %.2f/%.2f s = %.1fx; "
                    "(c) softmax %.3f->%.3f s, beam_topk %.3f->%.3f s (vocab %zu->%zu)",
                    wps122.mean_wps, wps66.mean_wps, ratio, prof.decoder, prof.encoder, dec_enc, prof.softmax,
                    filt.softmax, prof.beam_topk, filt.beam_topk, vocab, kept)};
}

// ---------------------------------------------------------------------------
// 8. Toy training

ModelConfig toy_model(std::size_t vocab, DecoderKind kind = DecoderKind::kTransformer) {
  auto c = tiny_config(kind, NormPlacement::kPre, vocab);
  c.d_model = 32;
  c.ffn_dim = 64;
  c.n_heads = 4;
  return c;
}

Outcome toy_training() {
  const std::size_t budget = 2000;
  ToyTaskSpec spec;  // 500 pairs, reversal
  spec.seed = 11;
  const auto task = make_toy_task(spec);
  ToyTaskSpec held = spec;
  held.pairs = 200;
  held.seed = 12;
  const auto heldout = make_toy_task(held);

  // Plain 2-2 Transformer.
  std::mt19937_64 rng(8);
  auto w = build_model<float>(toy_model(static_cast<std::size_t>(spec.vocab)), rng);
  Trainer<float> t1(w, toy_train_config(8));
  const auto r1 = fit(t1, w, task, task, budget, 0.95, false);
  const double h1 = evaluate(w, heldout).accuracy;

  // Deep-shallow and hybrid children of a briefly trained 2-2 parent; the
  // parent's updates count against the budget.
  const std::size_t parent_steps = 300;
  std::mt19937_64 prng(9);
  auto parent = build_model<float>(toy_model(static_cast<std::size_t>(spec.vocab)), prng);
  Trainer<float> tp(parent, toy_train_config(9));
  const auto rp = fit(tp, parent, task, task, parent_steps, 2.0, false);

  auto ds = init_deep_shallow(parent, 4, 1);
  Trainer<float> t2(ds, toy_train_config(10));
  const auto r2 = fit(t2, ds, task, task, budget - parent_steps, 0.95, false);

  std::mt19937_64 hrng(10);
  auto hy = init_hybrid(parent, 2, hrng);
  Trainer<float> t3(hy, toy_train_config(11));
  const auto r3 = fit(t3, hy, task, task, budget - parent_steps, 0.95, false);

  // Multi-decoder: two target languages sharing one parent, then one decoder
  // per language. Source prefixes carry the target-language token.
  const int yy = 4, zz = 5;
  auto two_lang = [&](std::size_t pairs, std::uint64_t seed) {
    ToyTaskSpec a;
    a.pairs = pairs;
    a.first_token = 6;
    a.vocab = 26;
    a.reverse = false;
    a.tgt_lang = "yy";
    a.src_prefix = {yy};
    a.seed = seed;
    ToyTaskSpec b = a;
    b.reverse = true;
    b.tgt_lang = "zz";
    b.src_prefix = {zz};
    b.seed = seed + 1;
    auto out = make_toy_task(a);
    auto more = make_toy_task(b);
    out.insert(out.end(), more.begin(), more.end());
    return out;
  };
  const auto md_train = two_lang(500, 21), md_eval = two_lang(200, 31);
  auto by_lang = [](const std::vector<Example>& d, const std::string& l) {
    std::vector<Example> out;
    for (const auto& ex : d)
      if (ex.tgt_lang == l) out.push_back(ex);
    return out;
  };
  auto mcfg = toy_model(26);
  mcfg.languages = {"yy", "zz"};
  std::mt19937_64 mrng(12);
  auto shared = build_model<float>(mcfg, mrng);
  Trainer<float> ts(shared, toy_train_config(12));
  fit(ts, shared, md_train, md_eval, 3000, 0.97, false);
  std::map<std::string, double> before, after;
  for (const std::string l : {"yy", "zz"}) before[l] = evaluate(shared, by_lang(md_eval, l)).accuracy;
  std::vector<int> content{kPad, kBos, kEos, kUnk};
  for (int t = 6; t < 26; ++t) content.push_back(t);
  FinetuneSpec fs;
  fs.workflow = Workflow::kMultidecoder;
  fs.vocabs = {{"yy", LangVocab("yy", content, 26)}, {"zz", LangVocab("zz", content, 26)}};
  auto fcfg = toy_train_config(13);
  fcfg.max_updates = 300;
  const auto md = finetune(shared, &ts.state(), fs, md_train, fcfg);
  for (const std::string l : {"yy", "zz"}) after[l] = evaluate(md.weights, by_lang(md_eval, l)).accuracy;
  const double drop = std::max(before["yy"] - after["yy"], before["zz"] - after["zz"]);

  const bool pass = r1.accuracy > 0.95 && r2.accuracy > 0.95 && r3.accuracy > 0.95 && drop <= 0.01;
  return {pass,
          fmt("2-2 %.3f at %zu steps (held-out %.3f); deep-shallow 4-1 %.3f at %zu+%zu steps; hybrid %.3f at "
              "%zu+%zu steps (parent %.3f after %zu); multi-decoder per-language yy %.3f->%.3f, zz %.3f->%.3f",
              r1.accuracy, r1.steps, h1, r2.accuracy, parent_steps, r2.steps, r3.accuracy, parent_steps, r3.steps,
              rp.accuracy, rp.steps, before["yy"], after["yy"], before["zz"], after["zz"])};
}

// ---------------------------------------------------------------------------
// 9. Metrics

Outcome metric_sanity() {
  const std::vector<std::string> x{"the cat sat on the mat", "a quick brown fox jumps", "hello world"};
  const double self = bleu(x, x).score;
  // precisions 5/6, 3/5, 2/4, 1/3, equal lengths
  const double hand_bleu = 100.0 * std::pow(5.0 / 6 * 3.0 / 5 * 2.0 / 4 * 1.0 / 3, 0.25);
  const double got_bleu = bleu({"the cat sat on the mat"}, {"the cat sat on a mat"}).score;
  // "ab" vs "ac": order 1 P = R = 1/2, order 2 P = R = 0; averaged 1/4 each
  const double got_chrf = chrf({"ab"}, {"ac"}).score;
  const double hand_chrf = 0.25;

  // Noise-ignoring model: zeroed cross-attention outputs cut the decoder off
  // from the source, so clean and noisy inputs decode identically.
  std::mt19937_64 rng(3);
  auto w = build_model<double>(tiny_config(DecoderKind::kTransformer, NormPlacement::kPost, 30), rng);
  for (auto& l : w.targets[0].decoder.layers) {
    l.cross_attn.o.w.mutable_value().fill(0.0);
    l.cross_attn.o.b.mutable_value().fill(0.0);
  }
  const auto clean_src = random_sequences(20, 3, 8, 30, rng);
  auto noisy_src = clean_src;
  std::uniform_int_distribution<int> tok(4, 29);
  for (auto& s : noisy_src) s[0] = kUnk, s.push_back(tok(rng));
  DecodeConfig dc;
  dc.max_len = 8;
  auto text = [](const std::vector<Hypothesis>& hs) {
    std::vector<std::string> out;
    for (const auto& h : hs) {
      std::string s;
      for (int t : h.output()) s += (s.empty() ? "" : " ") + std::to_string(t);
      out.push_back(s);
    }
    return out;
  };
  const double cons = bleu_consistency(text(translate(w, clean_src, dc)), text(translate(w, noisy_src, dc))).value;

  const bool pass = std::abs(self - 100) < 1e-9 && std::abs(got_bleu - hand_bleu) < 1e-4 &&
                    std::abs(got_chrf - hand_chrf) < 1e-4 && std::abs(cons - 100) < 1e-9;
  return {pass, fmt("bleu(x,x)=%.4f; bleu %.6f vs hand %.6f; chrF %.6f vs hand %.6f; consistency %.4f", self,
                    got_bleu, hand_bleu, got_chrf, hand_chrf, cons)};
}

// ---------------------------------------------------------------------------
// 10. Noise harness

Outcome noise_harness() {
  const std::string sentence = "abcde fghi";  // 10 characters, 9 interior slots
  const std::size_t draws = 3000;
  std::mt19937_64 rng(2024);
  std::vector<double> freq(11, 0.0);
  std::map<UnkPlacement, double> placement;
  for (std::size_t i = 0; i < draws; ++i) {
    UnkPlacement p;
    const auto r = noise_unk(sentence, rng, &p);
    freq[r.ops.at(0).position] += 1.0 / draws;
    placement[p] += 1.0 / draws;
  }
  double worst = 0;
  for (std::size_t pos = 0; pos <= 10; ++pos) {
    const double expected = (pos == 0 || pos == 10) ? 1.0 / 3 : 1.0 / 27;
    worst = std::max(worst, std::abs(freq[pos] - expected));
  }
  for (auto p : {UnkPlacement::kBegin, UnkPlacement::kMiddle, UnkPlacement::kEnd})
    worst = std::max(worst, std::abs(placement[p] - 1.0 / 3));

  SyntheticSpec spec;
  spec.languages = {"en", "fr"};
  spec.lines = 10000;
  spec.coverage = 1.0;
  spec.min_words = 1;
  spec.max_words = 8;
  spec.seed = 4;
  const auto corpus = make_synthetic_corpus(spec);
  std::size_t n = 0, violations = 0, max_delta = 0;
  for (const auto& [fr, en] : corpus.lines({"fr", "en"})) {
    for (const auto* s : {&fr, &en}) {
      if (n == 10000) break;
      ++n;
      const auto r = noise_char(*s, 3, rng);
      const auto a = utf8::chars(*s).size(), b = utf8::chars(r.text).size();
      const std::size_t d = a > b ? a - b : b - a;
      max_delta = std::max(max_delta, d);
      violations += d > 3;
    }
  }
  return {worst <= 0.03 && violations == 0 && n == 10000,
          fmt("unk position max deviation %.4f over %zu draws; char noise max |dlen| %zu over %zu sentences", worst,
              draws, max_delta, n)};
}

}  // namespace

// Optional arguments select criteria by number.
int main(int argc, char** argv) {
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(static_cast<std::size_t>(std::stoul(argv[i])));
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"parameter counts", param_counts},
      {"sampling probabilities", sampling_table},
      {"cache equivalence", cache_equivalence},
      {"beam oracle", beam_oracle},
      {"filtering equivalence", filtering_equivalence},
      {"gradient check", gradient_check},
      {"speed trends", speed_trends},
      {"toy training", toy_training},
      {"metric sanity", metric_sanity},
      {"robustness harness", noise_harness}};
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %zu %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(), s);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
