#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lightnmt/error.hpp"
#include "lightnmt/subword.hpp"

namespace lightnmt {

inline constexpr const char* kEnglish = "en";

struct SentencePair {
  std::string src_lang, tgt_lang;
  std::string src, tgt;
};

using LanguagePair = std::pair<std::string, std::string>;  // (src, tgt)

// Line-aligned parallel data keyed by direction. A corpus loaded from
// "a-b.a"/"a-b.b" files is usable in both directions, so it is stored under
// both (a,b) and (b,a).
class MultiCorpus {
 public:
  void add(const std::string& src_lang, const std::string& tgt_lang, std::string src,
           std::string tgt) {
    if (src_lang == tgt_lang)
      throw DataError("sentence pair must cross languages, got " + src_lang + "-" +
                      tgt_lang);
    data_[{src_lang, tgt_lang}].emplace_back(std::move(src), std::move(tgt));
  }
  // Adds the pair in both directions.
  void add_bidirectional(const std::string& a, const std::string& b, const std::string& text_a,
                         const std::string& text_b) {
    add(a, b, text_a, text_b);
    add(b, a, text_b, text_a);
  }
  void ensure_direction(const std::string& src_lang, const std::string& tgt_lang) {
    data_[{src_lang, tgt_lang}];
  }

  std::size_t size(const LanguagePair& dir) const {
    auto it = data_.find(dir);
    return it == data_.end() ? 0 : it->second.size();
  }
  std::vector<LanguagePair> directions() const {
    std::vector<LanguagePair> out;
    for (const auto& [k, v] : data_) out.push_back(k);
    return out;
  }
  std::vector<std::string> languages() const {
    std::set<std::string> langs;
    for (const auto& [k, v] : data_) {
      langs.insert(k.first);
      langs.insert(k.second);
    }
    return {langs.begin(), langs.end()};
  }
  const std::vector<std::pair<std::string, std::string>>& lines(const LanguagePair& dir) const {
    static const std::vector<std::pair<std::string, std::string>> empty;
    auto it = data_.find(dir);
    return it == data_.end() ? empty : it->second;
  }
  SentencePair pair_at(const LanguagePair& dir, std::size_t i) const {
    const auto& l = lines(dir).at(i);
    return {dir.first, dir.second, l.first, l.second};
  }
  std::vector<SentencePair> all_pairs() const {
    std::vector<SentencePair> out;
    for (const auto& [dir, ls] : data_)
      for (const auto& [s, t] : ls) out.push_back({dir.first, dir.second, s, t});
    return out;
  }
  std::size_t total_pairs() const {
    std::size_t n = 0;
    for (const auto& [k, v] : data_) n += v.size();
    return n;
  }

 private:
  std::map<LanguagePair, std::vector<std::pair<std::string, std::string>>> data_;
};

// ---------------------------------------------------------------------------
// Temperature-based language sampling: p_k = D_k^(1/T) / sum_i D_i^(1/T)

struct SamplingConfig {
  double temperature = 5.0;
  bool english_centric = true;
  std::string pivot = kEnglish;

  void validate() const {
    if (!(temperature > 0.0))
      throw ConfigError("sampling temperature must be > 0, got " +
                        std::to_string(temperature));
  }
};

inline std::vector<double> temperature_probabilities(const std::vector<double>& sizes,
                                                     double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("sampling temperature must be > 0");
  std::vector<double> p(sizes.size());
  double z = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    p[i] = sizes[i] > 0 ? std::pow(sizes[i], 1.0 / temperature) : 0.0;
    z += p[i];
  }
  if (z <= 0) throw DataError("no direction with data to sample from");
  for (auto& v : p) v /= z;
  return p;
}

// Probability of each sampled direction under `cfg`.
inline std::map<LanguagePair, double> direction_probabilities(const MultiCorpus& corpus,
                                                              const SamplingConfig& cfg) {
  cfg.validate();
  std::map<LanguagePair, double> out;
  if (cfg.english_centric) {
    // Pick a non-pivot language by the size of its pivot pair, then a
    // direction uniformly.
    std::vector<std::string> langs;
    std::vector<double> sizes;
    for (const auto& l : corpus.languages()) {
      if (l == cfg.pivot) continue;
      const double d = static_cast<double>(
          std::max(corpus.size({l, cfg.pivot}), corpus.size({cfg.pivot, l})));
      if (d <= 0) continue;
      langs.push_back(l);
      sizes.push_back(d);
    }
    auto p = temperature_probabilities(sizes, cfg.temperature);
    for (std::size_t i = 0; i < langs.size(); ++i) {
      const bool to_pivot = corpus.size({langs[i], cfg.pivot}) > 0;
      const bool from_pivot = corpus.size({cfg.pivot, langs[i]}) > 0;
      const double share = (to_pivot && from_pivot) ? 0.5 : 1.0;
      if (to_pivot) out[{langs[i], cfg.pivot}] += share * p[i];
      if (from_pivot) out[{cfg.pivot, langs[i]}] += share * p[i];
    }
  } else {
    auto dirs = corpus.directions();
    std::vector<double> sizes;
    for (const auto& d : dirs) sizes.push_back(static_cast<double>(corpus.size(d)));
    auto p = temperature_probabilities(sizes, cfg.temperature);
    for (std::size_t i = 0; i < dirs.size(); ++i)
      if (p[i] > 0) out[dirs[i]] = p[i];
  }
  return out;
}

// Marginal probability of each target language.
inline std::map<std::string, double> target_language_probabilities(
    const MultiCorpus& corpus, const SamplingConfig& cfg) {
  std::map<std::string, double> out;
  for (const auto& [dir, p] : direction_probabilities(corpus, cfg)) out[dir.second] += p;
  return out;
}

template <class Rng>
LanguagePair sample_target_language(const MultiCorpus& corpus, const SamplingConfig& cfg,
                                    Rng& rng) {
  const auto probs = direction_probabilities(corpus, cfg);
  std::vector<LanguagePair> dirs;
  std::vector<double> w;
  for (const auto& [d, p] : probs) {
    dirs.push_back(d);
    w.push_back(p);
  }
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  return dirs[pick(rng)];
}

// Repeatedly samples a direction, then a uniformly random line from it.
template <class Rng>
std::vector<SentencePair> sample_pairs(const MultiCorpus& corpus, const SamplingConfig& cfg,
                                       std::size_t n, Rng& rng) {
  const auto probs = direction_probabilities(corpus, cfg);
  std::vector<LanguagePair> dirs;
  std::vector<double> w;
  for (const auto& [d, p] : probs) {
    dirs.push_back(d);
    w.push_back(p);
  }
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::vector<SentencePair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& d = dirs[pick(rng)];
    std::uniform_int_distribution<std::size_t> line(0, corpus.size(d) - 1);
    out.push_back(corpus.pair_at(d, line(rng)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tokenized examples and batching

struct Example {
  std::string src_lang, tgt_lang;
  std::vector<int> src;  // encoder input (language code already inserted if used)
  std::vector<int> tgt;  // target tokens, without BOS/EOS
  int decoder_start = kBos;

  std::size_t length() const { return std::max(src.size(), tgt.size() + 1); }
};

enum class LangCodePosition { kEncoder, kDecoder, kNone };

struct CodedSource {
  std::vector<int> src;
  int decoder_start = kBos;
};

// Encoder mode prefixes the source with the target-language code; decoder
// mode leaves the source alone and starts decoding from the code instead of
// BOS.
inline CodedSource insert_language_code(const BpeModel& model, std::vector<int> src,
                                        const std::string& tgt_lang,
                                        LangCodePosition position) {
  if (position == LangCodePosition::kNone) return {std::move(src), kBos};
  auto code = model.lang_code_id(tgt_lang);
  if (!code) throw DataError("no language code registered for '" + tgt_lang + "'");
  if (position == LangCodePosition::kEncoder) {
    src.insert(src.begin(), *code);
    return {std::move(src), kBos};
  }
  return {std::move(src), *code};
}

inline std::vector<int> strip_language_code(const BpeModel& model, std::vector<int> src) {
  if (!src.empty() && src.front() > kUnk && model.is_special(src.front()))
    src.erase(src.begin());
  return src;
}

struct BatchingResult {
  std::vector<std::vector<Example>> batches;
  std::vector<std::string> skipped;  // one message per pair over max_tokens
};

namespace detail {
inline void cut_into_batches(std::vector<Example>& items, std::size_t max_tokens,
                             std::vector<std::vector<Example>>& out) {
  std::stable_sort(items.begin(), items.end(), [](const Example& a, const Example& b) {
    return a.length() < b.length();
  });
  std::vector<Example> cur;
  std::size_t longest = 0;
  for (auto& ex : items) {
    const std::size_t len = std::max(longest, ex.length());
    if (!cur.empty() && len * (cur.size() + 1) > max_tokens) {
      out.push_back(std::move(cur));
      cur.clear();
      longest = 0;
    }
    longest = std::max(longest, ex.length());
    cur.push_back(std::move(ex));
  }
  if (!cur.empty()) out.push_back(std::move(cur));
}
}  // namespace detail

// Shuffles the stream, takes `buffer` examples at a time, sorts them by
// length and cuts batches whose padded size (count x longest) stays within
// max_tokens. Homogeneous mode groups each buffer by target language first.
template <class Rng>
BatchingResult make_batches(std::vector<Example> examples, std::size_t max_tokens,
                            bool homogeneous, std::size_t buffer, Rng& rng,
                            bool shuffle = true) {
  if (max_tokens == 0) throw ConfigError("max_tokens must be positive");
  if (buffer == 0) throw ConfigError("batching buffer must be positive");
  BatchingResult result;
  std::vector<Example> usable;
  for (auto& ex : examples) {
    if (ex.length() > max_tokens) {
      result.skipped.push_back(ex.src_lang + "-" + ex.tgt_lang + ": length " +
                               std::to_string(ex.length()) + " exceeds max_tokens " +
                               std::to_string(max_tokens));
      continue;
    }
    usable.push_back(std::move(ex));
  }
  if (shuffle) std::shuffle(usable.begin(), usable.end(), rng);
  for (std::size_t start = 0; start < usable.size(); start += buffer) {
    const std::size_t end = std::min(usable.size(), start + buffer);
    std::vector<std::vector<Example>> chunk_batches;
    if (homogeneous) {
      std::map<std::string, std::vector<Example>> by_lang;
      for (std::size_t i = start; i < end; ++i)
        by_lang[usable[i].tgt_lang].push_back(std::move(usable[i]));
      for (auto& [lang, items] : by_lang)
        detail::cut_into_batches(items, max_tokens, chunk_batches);
    } else {
      std::vector<Example> items(std::make_move_iterator(usable.begin() + start),
                                 std::make_move_iterator(usable.begin() + end));
      detail::cut_into_batches(items, max_tokens, chunk_batches);
    }
    if (shuffle) std::shuffle(chunk_batches.begin(), chunk_batches.end(), rng);
    for (auto& b : chunk_batches) result.batches.push_back(std::move(b));
  }
  return result;
}

inline std::size_t padded_tokens(const std::vector<Example>& batch) {
  std::size_t longest = 0;
  for (const auto& ex : batch) longest = std::max(longest, ex.length());
  return longest * batch.size();
}

// ---------------------------------------------------------------------------
// Synthetic noise

enum class NoiseKind { kUnk, kDelete, kInsert, kSwap, kSubstitute };

inline const char* noise_kind_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::kUnk: return "unk";
    case NoiseKind::kDelete: return "del";
    case NoiseKind::kInsert: return "ins";
    case NoiseKind::kSwap: return "swap";
    case NoiseKind::kSubstitute: return "sub";
  }
  return "?";
}

struct NoiseOp {
  NoiseKind kind;
  std::size_t position;  // character offset the op applied at
  std::string character;  // inserted / substituted character, empty otherwise
};

struct NoiseResult {
  std::string text;
  std::vector<NoiseOp> ops;
  std::size_t requested_ops = 0;
};

enum class UnkPlacement { kBegin, kMiddle, kEnd };

inline std::string join_chars(const std::vector<std::string>& cs) {
  std::string s;
  for (const auto& c : cs) s += c;
  return s;
}

// Picks a character absent from the sentence.
inline std::string out_of_alphabet_char(const std::vector<std::string>& chars) {
  static const char* candidates[] = {"\xE2\x81\x87", "\xEF\xBF\xBD", "\xE2\x98\x83", "#"};
  for (const char* c : candidates)
    if (std::find(chars.begin(), chars.end(), c) == chars.end()) return c;
  return "\xE2\x96\xA0";
}

// Inserts one unknown character at the beginning, a uniformly random interior
// position, or the end, each with probability 1/3.
template <class Rng>
NoiseResult noise_unk(const std::string& sentence, Rng& rng,
                      UnkPlacement* placement_out = nullptr) {
  if (sentence.empty()) throw ContractError("noise_unk: empty sentence");
  auto chars = utf8::chars(sentence);
  const std::string unk = out_of_alphabet_char(chars);
  std::uniform_int_distribution<int> where(0, 2);
  const auto placement = static_cast<UnkPlacement>(where(rng));
  std::size_t pos = 0;
  switch (placement) {
    case UnkPlacement::kBegin: pos = 0; break;
    case UnkPlacement::kEnd: pos = chars.size(); break;
    case UnkPlacement::kMiddle:
      if (chars.size() >= 2) {
        std::uniform_int_distribution<std::size_t> mid(1, chars.size() - 1);
        pos = mid(rng);
      } else {
        pos = chars.size();  // a single character has no interior
      }
      break;
  }
  if (placement_out) *placement_out = placement;
  chars.insert(chars.begin() + static_cast<std::ptrdiff_t>(pos), unk);
  return {join_chars(chars), {{NoiseKind::kUnk, pos, unk}}, 1};
}

inline std::vector<std::string> char_alphabet(const std::vector<std::string>& chars) {
  std::set<std::string> s;
  for (const auto& c : chars)
    if (c != " " && c != "\t") s.insert(c);
  return {s.begin(), s.end()};
}

// One character-level edit of the given kind at a uniformly random position.
template <class Rng>
NoiseOp apply_char_op(std::vector<std::string>& chars, NoiseKind kind,
                      const std::vector<std::string>& alphabet, Rng& rng) {
  auto pick_char = [&] {
    std::uniform_int_distribution<std::size_t> d(0, alphabet.size() - 1);
    return alphabet[d(rng)];
  };
  switch (kind) {
    case NoiseKind::kDelete: {
      std::uniform_int_distribution<std::size_t> d(0, chars.size() - 1);
      const std::size_t p = d(rng);
      chars.erase(chars.begin() + static_cast<std::ptrdiff_t>(p));
      return {kind, p, {}};
    }
    case NoiseKind::kInsert: {
      std::uniform_int_distribution<std::size_t> d(0, chars.size());
      const std::size_t p = d(rng);
      auto c = pick_char();
      chars.insert(chars.begin() + static_cast<std::ptrdiff_t>(p), c);
      return {kind, p, c};
    }
    case NoiseKind::kSwap: {
      std::uniform_int_distribution<std::size_t> d(0, chars.size() - 2);
      const std::size_t p = d(rng);
      std::swap(chars[p], chars[p + 1]);
      return {kind, p, {}};
    }
    case NoiseKind::kSubstitute: {
      std::uniform_int_distribution<std::size_t> d(0, chars.size() - 1);
      const std::size_t p = d(rng);
      auto c = pick_char();
      chars[p] = c;
      return {kind, p, c};
    }
    case NoiseKind::kUnk: break;
  }
  throw ContractError("apply_char_op: unsupported kind");
}

// Applies min(n_ops, length) random edits drawn uniformly from
// {delete, insert, swap, substitute}; inserted and substituted characters
// come from the sentence's own alphabet. Kinds that are impossible on the
// current string (swap on < 2 chars) are redrawn.
template <class Rng>
NoiseResult noise_char(const std::string& sentence, std::size_t n_ops, Rng& rng) {
  auto chars = utf8::chars(sentence);
  const auto alphabet = char_alphabet(chars);
  NoiseResult result;
  result.requested_ops = n_ops;
  const std::size_t todo = alphabet.empty() ? 0 : std::min(n_ops, chars.size());
  static constexpr NoiseKind kinds[] = {NoiseKind::kDelete, NoiseKind::kInsert,
                                        NoiseKind::kSwap, NoiseKind::kSubstitute};
  std::uniform_int_distribution<int> pick(0, 3);
  for (std::size_t i = 0; i < todo; ++i) {
    NoiseKind k;
    do {
      k = kinds[pick(rng)];
    } while ((k == NoiseKind::kSwap && chars.size() < 2) ||
             (k != NoiseKind::kInsert && chars.empty()));
    result.ops.push_back(apply_char_op(chars, k, alphabet, rng));
  }
  result.text = join_chars(chars);
  return result;
}

// ---------------------------------------------------------------------------
// Multi-parallel corpus through the pivot language

// For every pair of non-pivot languages X, Y, emits (x, y) whenever x and y
// are aligned to the same pivot line. Pivot lines are joined on exact string
// match, duplicates included. The input pivot directions are kept.
inline MultiCorpus build_multiparallel(const MultiCorpus& english_centric,
                                       const std::string& pivot = kEnglish) {
  MultiCorpus out;
  std::vector<std::string> others;
  for (const auto& l : english_centric.languages())
    if (l != pivot) others.push_back(l);
  // pivot line -> lines in language X
  std::map<std::string, std::unordered_map<std::string, std::vector<std::string>>> index;
  for (const auto& x : others) {
    if (english_centric.size({x, pivot}) == 0 && english_centric.size({pivot, x}) == 0)
      throw DataError("build_multiparallel: missing " + x + "-" + pivot + " data");
    auto& idx = index[x];
    if (english_centric.size({x, pivot}) > 0) {
      for (const auto& [xs, es] : english_centric.lines({x, pivot})) idx[es].push_back(xs);
    } else {
      for (const auto& [es, xs] : english_centric.lines({pivot, x})) idx[es].push_back(xs);
    }
  }
  for (const auto& dir : english_centric.directions())
    for (const auto& [s, t] : english_centric.lines(dir)) out.add(dir.first, dir.second, s, t);
  for (const auto& x : others)
    for (const auto& y : others) {
      if (x == y) continue;
      out.ensure_direction(x, y);
      const auto& ix = index[x];
      const auto& iy = index[y];
      // iterate x's pivot lines in a stable order
      std::vector<std::string> keys;
      for (const auto& [e, xs] : ix) keys.push_back(e);
      std::sort(keys.begin(), keys.end());
      for (const auto& e : keys) {
        auto jt = iy.find(e);
        if (jt == iy.end()) continue;
        for (const auto& xs : ix.at(e))
          for (const auto& ys : jt->second) out.add(x, y, xs, ys);
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus files: <dir>/<a>-<b>.<a> and <dir>/<a>-<b>.<b>, aligned by line.

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline void write_lines(const std::filesystem::path& path,
                        const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

// Writes one file pair per unordered language pair.
inline void save_corpus_dir(const MultiCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [a, b] : corpus.directions()) {
    if (a > b && corpus.size({b, a}) == corpus.size({a, b})) continue;
    std::vector<std::string> la, lb;
    for (const auto& [s, t] : corpus.lines({a, b})) {
      la.push_back(s);
      lb.push_back(t);
    }
    const std::string stem = a + "-" + b;
    write_lines(dir / (stem + "." + a), la);
    write_lines(dir / (stem + "." + b), lb);
  }
}

inline MultiCorpus load_corpus_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  MultiCorpus corpus;
  std::vector<std::filesystem::path> entries;
  for (const auto& e : std::filesystem::directory_iterator(dir)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  for (const auto& p : entries) {
    const std::string stem = p.stem().string();
    const std::string ext = p.extension().string();
    const auto dash = stem.find('-');
    if (dash == std::string::npos || ext.size() < 2) continue;
    const std::string a = stem.substr(0, dash), b = stem.substr(dash + 1);
    if (ext.substr(1) != a) continue;  // handle each pair once, from the a-side file
    const auto other = dir / (stem + "." + b);
    if (!std::filesystem::exists(other)) throw DataError("missing parallel file " + other.string());
    auto la = read_lines(p);
    auto lb = read_lines(other);
    if (la.size() != lb.size())
      throw DataError("line count mismatch between " + p.string() + " and " + other.string());
    for (std::size_t i = 0; i < la.size(); ++i) corpus.add_bidirectional(a, b, la[i], lb[i]);
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Synthetic toy languages: every language is a deterministic transform of a
// shared pivot-language sentence (letter substitution, per-language suffix,
// optional word-order reversal), so any two languages are mutually
// translatable through the pivot.

struct SyntheticLanguage {
  std::string code;
  std::map<char, char> letters;
  std::string suffix;
  bool reverse_order = false;

  std::string translate_word(const std::string& w) const {
    std::string out;
    for (char c : w) {
      auto it = letters.find(c);
      out += it == letters.end() ? c : it->second;
    }
    return out + suffix;
  }
  std::string from_pivot(const std::string& pivot_sentence) const {
    auto words = split_words(pivot_sentence);
    if (reverse_order) std::reverse(words.begin(), words.end());
    std::string out;
    for (const auto& w : words) out += (out.empty() ? "" : " ") + translate_word(w);
    return out;
  }
};

struct SyntheticSpec {
  std::vector<std::string> languages{"en", "fr", "de"};
  std::size_t lines = 200;  // size of the shared pivot-sentence pool
  double coverage = 0.8;     // chance a pool sentence appears for a language
  std::size_t lexicon = 40;
  std::size_t min_words = 2, max_words = 6;
  std::string alphabet = "abcdefghijklmnop";
  std::uint64_t seed = 1;
};

template <class Rng>
std::vector<SyntheticLanguage> make_synthetic_languages(const SyntheticSpec& spec, Rng& rng) {
  std::vector<SyntheticLanguage> langs;
  for (std::size_t i = 0; i < spec.languages.size(); ++i) {
    SyntheticLanguage l;
    l.code = spec.languages[i];
    if (l.code != spec.languages.front()) {
      std::string perm = spec.alphabet;
      std::shuffle(perm.begin(), perm.end(), rng);
      for (std::size_t j = 0; j < spec.alphabet.size(); ++j) l.letters[spec.alphabet[j]] = perm[j];
      l.suffix = std::string(1, spec.alphabet[i % spec.alphabet.size()]);
      l.reverse_order = (i % 2) == 0;
    }
    langs.push_back(std::move(l));
  }
  return langs;
}

// Pivot-centric corpus: the first language is the pivot; every other
// language is paired with a random subset of one shared pool of pivot
// sentences, so languages overlap through the pivot side.
inline MultiCorpus make_synthetic_corpus(const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  auto langs = make_synthetic_languages(spec, rng);
  std::vector<std::string> lexicon;
  std::uniform_int_distribution<std::size_t> wl(2, 5);
  std::uniform_int_distribution<std::size_t> letter(0, spec.alphabet.size() - 1);
  std::set<std::string> seen;
  while (lexicon.size() < spec.lexicon) {
    std::string w;
    for (std::size_t n = wl(rng); n > 0; --n) w += spec.alphabet[letter(rng)];
    if (seen.insert(w).second) lexicon.push_back(w);
  }
  std::uniform_int_distribution<std::size_t> nw(spec.min_words, spec.max_words);
  std::uniform_int_distribution<std::size_t> pick(0, lexicon.size() - 1);
  std::vector<std::string> pool;
  for (std::size_t i = 0; i < spec.lines; ++i) {
    std::string e;
    for (std::size_t n = nw(rng); n > 0; --n) e += (e.empty() ? "" : " ") + lexicon[pick(rng)];
    pool.push_back(std::move(e));
  }
  MultiCorpus corpus;
  const auto& pivot = langs.front();
  std::bernoulli_distribution covered(spec.coverage);
  for (std::size_t li = 1; li < langs.size(); ++li)
    for (const auto& e : pool)
      if (covered(rng))
        corpus.add_bidirectional(langs[li].code, pivot.code, langs[li].from_pivot(e), e);
  return corpus;
}

}  // namespace lightnmt
