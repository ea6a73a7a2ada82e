#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lightnmt/corpus.hpp"
#include "lightnmt/model.hpp"
#include "lightnmt/surgery.hpp"

namespace lightnmt {

struct DecodeConfig {
  std::size_t beam_size = 5;
  std::size_t batch_size = 64;
  std::size_t max_len = 256;  // generated tokens, EOS included
  double length_penalty = 1.0;
  bool sort_by_length = true;  // off: batches follow input order
  std::string tgt_lang;        // routes multi-decoder models
  int start_token = kBos;      // global id fed at the first step
  std::optional<LangVocab> lang_vocab;

  void validate() const {
    if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
  }
};

struct Hypothesis {
  std::vector<int> tokens;  // global ids; a finished hypothesis ends with EOS
  double score = 0;         // sum of token log-probabilities; NaN from greedy
  bool finished = false;

  std::vector<int> output() const {
    std::vector<int> out = tokens;
    if (!out.empty() && out.back() == kEos) out.pop_back();
    return out;
  }
};

// Score used to compare finished hypotheses: sum / length^penalty.
inline double normalized_score(double score, std::size_t length, double penalty) {
  return score / std::pow(static_cast<double>(std::max<std::size_t>(length, 1)), penalty);
}

namespace detail {

template <class T>
int start_id(const TargetSide<T>& ts, int global) {
  const int local = ts.to_local(global);
  if (local < 0)
    throw DataError("start token " + std::to_string(global) + " is outside the target vocabulary");
  return local;
}

inline std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

template <class T>
Tensor<T> step_log_probs(const ModelWeights<T>& w, const TargetSide<T>& ts, DecoderState<T>& st,
                         std::span<const int> prev, Profiler* prof) {
  ScopedTimer timer(prof, Bucket::kDecoder);
  Tensor<T> logits = decode_step(w, ts, st, prev, prof);
  ScopedTimer sm(prof, Bucket::kSoftmax);
  for (std::size_t r = 0; r < logits.rows(); ++r)
    kernels::log_softmax_row<T>(logits.row_span(r), logits.row_span(r));
  return logits;
}

template <class T>
void reorder_timed(DecoderState<T>& st, std::span<const std::size_t> parent, Profiler* prof) {
  ScopedTimer timer(prof, Bucket::kDecoder);
  reorder_state(st, parent);
}

// Greedy decoding of one batch: argmax at every step, no score bookkeeping.
template <class T>
std::vector<Hypothesis> greedy_batch(const ModelWeights<T>& w, const TargetSide<T>& ts,
                                     const std::vector<std::vector<int>>& srcs,
                                     const DecodeConfig& dc, Profiler* prof) {
  const std::size_t b = srcs.size();
  std::vector<Hypothesis> out(b);
  for (auto& h : out) h.score = std::numeric_limits<double>::quiet_NaN();
  const auto enc = encode(w, srcs, prof);
  auto st = init_state(w, ts, enc, iota_rows(b));
  std::vector<std::size_t> row_sent = iota_rows(b);
  std::vector<int> prev(b, start_id(ts, dc.start_token));
  const int eos = ts.to_local(kEos);
  for (std::size_t step = 0; step < dc.max_len && !row_sent.empty(); ++step) {
    Tensor<T> logits;
    {
      ScopedTimer timer(prof, Bucket::kDecoder);
      logits = decode_step(w, ts, st, prev, prof);
    }
    ScopedTimer timer(prof, Bucket::kBeamTopk);
    std::vector<std::size_t> keep;
    std::vector<int> next;
    for (std::size_t r = 0; r < row_sent.size(); ++r) {
      const auto row = logits.row_span(r);
      const int tok = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      Hypothesis& h = out[row_sent[r]];
      h.tokens.push_back(ts.to_global(tok));
      if (tok == eos) {
        h.finished = true;
      } else if (h.tokens.size() < dc.max_len) {
        keep.push_back(r);
        next.push_back(tok);
      }
    }
    if (keep.size() != row_sent.size()) {
      std::vector<std::size_t> rs;
      for (auto r : keep) rs.push_back(row_sent[r]);
      row_sent = std::move(rs);
      if (!keep.empty()) reorder_state(st, keep);
    }
    prev = std::move(next);
  }
  return out;
}

struct BeamItem {
  std::vector<int> tokens;  // local ids
  double score = 0;
  bool frozen = false;     // finished (EOS) or capped at max_len
  std::size_t row = 0;     // decoder row while live
};

struct Candidate {
  double score;
  std::size_t item;  // index in the sentence's current beam
  int token;         // -1 for a frozen item carried over
};

// Beam search over one batch; returns every sentence's final beam, best first.
template <class T>
std::vector<std::vector<Hypothesis>> beam_batch(const ModelWeights<T>& w, const TargetSide<T>& ts,
                                                const std::vector<std::vector<int>>& srcs,
                                                const DecodeConfig& dc, Profiler* prof) {
  const std::size_t b = srcs.size(), k = dc.beam_size, v = ts.size();
  const int eos = ts.to_local(kEos);
  const int start = start_id(ts, dc.start_token);
  const double lp = dc.length_penalty;
  const auto enc = encode(w, srcs, prof);
  auto st = init_state(w, ts, enc, iota_rows(b));
  std::vector<std::vector<BeamItem>> beams(b);
  for (std::size_t s = 0; s < b; ++s) beams[s].push_back({{}, 0.0, false, s});
  std::vector<bool> done(b, false);
  std::vector<int> prev(b, start);

  auto best_frozen = [&](const std::vector<BeamItem>& beam) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& it : beam)
      if (it.frozen && !it.tokens.empty() && it.tokens.back() == eos)
        best = std::max(best, normalized_score(it.score, it.tokens.size(), lp));
    return best;
  };

  for (std::size_t step = 0; step < dc.max_len && st.rows() > 0; ++step) {
    const Tensor<T> logp = step_log_probs(w, ts, st, prev, prof);
    std::vector<std::size_t> parents;
    std::vector<int> next;
    {
      ScopedTimer timer(prof, Bucket::kBeamTopk);
      std::vector<std::size_t> top;
      for (std::size_t s = 0; s < b; ++s) {
        if (done[s]) continue;
        auto& beam = beams[s];
        std::vector<Candidate> cands;
        for (std::size_t i = 0; i < beam.size(); ++i) {
          const BeamItem& it = beam[i];
          if (it.frozen) {
            cands.push_back({it.score, i, -1});
            continue;
          }
          const T* row = logp.data() + it.row * v;
          // k best tokens of this row, ties to the lower id
          top.resize(v);
          std::iota(top.begin(), top.end(), std::size_t{0});
          const std::size_t kk = std::min(k, v);
          std::partial_sort(top.begin(), top.begin() + static_cast<std::ptrdiff_t>(kk), top.end(),
                            [row](std::size_t a, std::size_t c) {
                              return row[a] != row[c] ? row[a] > row[c] : a < c;
                            });
          for (std::size_t j = 0; j < kk; ++j)
            cands.push_back({it.score + static_cast<double>(row[top[j]]), i, static_cast<int>(top[j])});
        }
        const std::size_t keep = std::min(k, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [](const Candidate& a, const Candidate& c) {
                            if (a.score != c.score) return a.score > c.score;
                            if (a.item != c.item) return a.item < c.item;
                            return a.token < c.token;
                          });
        std::vector<BeamItem> next_beam;
        for (std::size_t j = 0; j < keep; ++j) {
          const Candidate& c = cands[j];
          const BeamItem& parent = beam[c.item];
          if (c.token < 0) {
            next_beam.push_back(parent);
            continue;
          }
          BeamItem it{parent.tokens, c.score, false, 0};
          it.tokens.push_back(c.token);
          if (c.token == eos || it.tokens.size() >= dc.max_len) {
            it.frozen = true;
          } else {
            it.row = parents.size();
            parents.push_back(parent.row);
            next.push_back(c.token);
          }
          next_beam.push_back(std::move(it));
        }
        beam = std::move(next_beam);
        // Stop once no live hypothesis can still beat the best finished one:
        // log-probabilities are <= 0, so a live score only falls, and its
        // normalized value is bounded at one of the two length extremes.
        const double best = best_frozen(beam);
        double bound = -std::numeric_limits<double>::infinity();
        bool live = false;
        for (const auto& it : beam) {
          if (it.frozen) continue;
          live = true;
          const std::size_t len = it.tokens.size();
          bound = std::max({bound, normalized_score(it.score, len + 1, lp),
                            normalized_score(it.score, dc.max_len, lp)});
        }
        if (!live || best >= bound) {
          done[s] = true;
          if (live) {
            // drop this sentence's live rows from the batch
            std::vector<BeamItem> frozen;
            for (auto& it : beam)
              if (it.frozen) frozen.push_back(std::move(it));
            const std::size_t n_live = beam.size() - frozen.size();
            parents.resize(parents.size() - n_live);
            next.resize(next.size() - n_live);
            beam = std::move(frozen);
          }
        }
      }
    }
    reorder_timed(st, parents, prof);
    prev = std::move(next);
  }

  std::vector<std::vector<Hypothesis>> out(b);
  for (std::size_t s = 0; s < b; ++s) {
    auto& beam = beams[s];
    std::stable_sort(beam.begin(), beam.end(), [&](const BeamItem& a, const BeamItem& c) {
      const bool fa = !a.tokens.empty() && a.tokens.back() == eos;
      const bool fc = !c.tokens.empty() && c.tokens.back() == eos;
      if (fa != fc) return fa;
      return normalized_score(a.score, a.tokens.size(), lp) >
             normalized_score(c.score, c.tokens.size(), lp);
    });
    for (const auto& it : beam) {
      Hypothesis h;
      for (int t : it.tokens) h.tokens.push_back(ts.to_global(t));
      h.score = it.score;
      h.finished = !it.tokens.empty() && it.tokens.back() == eos;
      out[s].push_back(std::move(h));
    }
  }
  return out;
}

}  // namespace detail

// The decoder a configuration selects, after optional vocabulary filtering.
template <class T>
ModelWeights<T> decoding_view(const ModelWeights<T>& w, const DecodeConfig& dc) {
  return dc.lang_vocab ? filter_target_vocab(w, *dc.lang_vocab) : w;
}

// Greedy decoding of one batch of sources (dedicated beam-1 fast path).
template <class T>
std::vector<Hypothesis> greedy_decode(const ModelWeights<T>& w,
                                      const std::vector<std::vector<int>>& srcs,
                                      const DecodeConfig& dc, Profiler* prof = nullptr) {
  dc.validate();
  if (srcs.empty()) return {};
  const ModelWeights<T> view = decoding_view(w, dc);
  const std::string lang = dc.lang_vocab ? dc.lang_vocab->language() : dc.tgt_lang;
  return detail::greedy_batch(view, view.target_for(lang), srcs, dc, prof);
}

// Beam search over one batch; each sentence's hypotheses ranked best first.
template <class T>
std::vector<std::vector<Hypothesis>> beam_search(const ModelWeights<T>& w,
                                                 const std::vector<std::vector<int>>& srcs,
                                                 const DecodeConfig& dc, Profiler* prof = nullptr) {
  dc.validate();
  if (srcs.empty()) return {};
  const ModelWeights<T> view = decoding_view(w, dc);
  const std::string lang = dc.lang_vocab ? dc.lang_vocab->language() : dc.tgt_lang;
  return detail::beam_batch(view, view.target_for(lang), srcs, dc, prof);
}

// Best hypothesis per source, decoding in batches of dc.batch_size. With
// sort_by_length the batches group sources of similar length; results keep
// input order either way.
template <class T>
std::vector<Hypothesis> translate(const ModelWeights<T>& w, const std::vector<std::vector<int>>& srcs,
                                  const DecodeConfig& dc, Profiler* prof = nullptr) {
  dc.validate();
  const ModelWeights<T> view = decoding_view(w, dc);
  const std::string lang = dc.lang_vocab ? dc.lang_vocab->language() : dc.tgt_lang;
  const TargetSide<T>& ts = view.target_for(lang);
  std::vector<std::size_t> order(srcs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (dc.sort_by_length)
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return srcs[a].size() < srcs[b].size(); });
  std::vector<Hypothesis> out(srcs.size());
  for (std::size_t i = 0; i < order.size(); i += dc.batch_size) {
    std::vector<std::vector<int>> batch;
    const std::size_t end = std::min(order.size(), i + dc.batch_size);
    for (std::size_t j = i; j < end; ++j) batch.push_back(srcs[order[j]]);
    if (dc.beam_size == 1) {
      auto hyps = detail::greedy_batch(view, ts, batch, dc, prof);
      for (std::size_t j = i; j < end; ++j) out[order[j]] = std::move(hyps[j - i]);
    } else {
      auto ranked = detail::beam_batch(view, ts, batch, dc, prof);
      for (std::size_t j = i; j < end; ++j) out[order[j]] = std::move(ranked[j - i].front());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text-level translation

struct TextTranslation {
  std::vector<std::string> lines;
  std::vector<bool> flagged;  // empty input, empty pivot or unfinished output
};

// Tokenizes, inserts the target-language code, decodes and detokenizes.
template <class T>
TextTranslation translate_lines(const ModelWeights<T>& w, const BpeModel& bpe,
                                const std::vector<std::string>& lines, const std::string& tgt_lang,
                                LangCodePosition position, DecodeConfig dc,
                                Profiler* prof = nullptr) {
  TextTranslation out;
  out.lines.assign(lines.size(), "");
  out.flagged.assign(lines.size(), false);
  std::vector<std::vector<int>> srcs;
  std::vector<std::size_t> which;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto ids = to_ids(bpe, apply_bpe_line(bpe, lines[i]));
    auto coded = insert_language_code(bpe, std::move(ids), tgt_lang, position);
    dc.start_token = coded.decoder_start;
    if (coded.src.size() == (position == LangCodePosition::kEncoder ? 1u : 0u)) {
      out.flagged[i] = true;  // nothing to translate
      continue;
    }
    srcs.push_back(std::move(coded.src));
    which.push_back(i);
  }
  dc.tgt_lang = tgt_lang;
  const auto hyps = translate(w, srcs, dc, prof);
  for (std::size_t j = 0; j < hyps.size(); ++j) {
    out.lines[which[j]] = decode_ids(bpe, hyps[j].output());
    out.flagged[which[j]] = !hyps[j].finished;
  }
  return out;
}

// X -> pivot -> Y through an English-centric model. Degenerates to direct
// translation when either side is the pivot language.
template <class T>
TextTranslation translate_pivot(const ModelWeights<T>& w, const BpeModel& bpe,
                                const std::vector<std::string>& lines, const std::string& src_lang,
                                const std::string& tgt_lang, LangCodePosition position,
                                const DecodeConfig& dc, Profiler* prof = nullptr,
                                const std::string& pivot = kEnglish) {
  if (src_lang == pivot || tgt_lang == pivot)
    return translate_lines(w, bpe, lines, tgt_lang, position, dc, prof);
  DecodeConfig first = dc;
  first.lang_vocab.reset();
  const TextTranslation mid = translate_lines(w, bpe, lines, pivot, position, first, prof);
  TextTranslation out = translate_lines(w, bpe, mid.lines, tgt_lang, position, dc, prof);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (mid.lines[i].empty()) {
      out.lines[i].clear();
      out.flagged[i] = true;
    }
    out.flagged[i] = out.flagged[i] || mid.flagged[i];
  }
  return out;
}

}  // namespace lightnmt
