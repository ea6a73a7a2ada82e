#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lightnmt/error.hpp"

namespace lightnmt {

// Reserved ids shared by every vocabulary in the library.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";
inline constexpr std::string_view kUnkToken = "<unk>";
// Appended to the final subword of every word.
inline constexpr std::string_view kEndOfWord = "</w>";

inline std::string lang_code_token(std::string_view lang) {
  return "__" + std::string(lang) + "__";
}

namespace utf8 {

inline std::size_t char_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // invalid lead byte: treat as a single unit
}

// Splits a string into code points (each kept as its UTF-8 byte sequence).
inline std::vector<std::string> chars(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const std::size_t n = std::min(char_length(static_cast<unsigned char>(s[i])),
                                   s.size() - i);
    out.emplace_back(s.substr(i, n));
    i += n;
  }
  return out;
}

}  // namespace utf8

inline std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r' ||
                               line[i] == '\n'))
      ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r' &&
           line[j] != '\n')
      ++j;
    if (j > i) words.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return words;
}

inline bool ends_with_marker(std::string_view tok) {
  return tok.size() >= kEndOfWord.size() &&
         tok.substr(tok.size() - kEndOfWord.size()) == kEndOfWord;
}

// Joins subword tokens back into text: a token carrying the end-of-word
// marker closes a word.
inline std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  bool open = false;
  for (const auto& t : tokens) {
    if (!open && !out.empty()) out += ' ';
    if (ends_with_marker(t)) {
      out.append(t, 0, t.size() - kEndOfWord.size());
      open = false;
    } else {
      out += t;
      open = true;
    }
  }
  return out;
}

using SymbolPair = std::pair<std::string, std::string>;

// Shared BPE model: ordered merges plus the global token vocabulary.
class BpeModel {
 public:
  BpeModel() { add_specials({}); }

  // Builds the vocabulary from specials + languages + characters + merges.
  BpeModel(std::vector<SymbolPair> merges, const std::vector<std::string>& characters,
           const std::vector<std::string>& languages)
      : merges_(std::move(merges)) {
    add_specials(languages);
    for (const auto& c : characters) {
      add_token(c);
      add_token(c + std::string(kEndOfWord));
    }
    for (std::size_t r = 0; r < merges_.size(); ++r) {
      const auto& [l, rt] = merges_[r];
      ranks_.emplace(merges_[r], static_cast<int>(r));
      add_token(l + rt);
    }
  }

  // Vocabulary read from disk (token -> index) with the merge list.
  BpeModel(std::vector<SymbolPair> merges, std::vector<std::string> id_to_token)
      : merges_(std::move(merges)), id_to_token_(std::move(id_to_token)) {
    if (id_to_token_.size() < 4 || id_to_token_[kPad] != kPadToken ||
        id_to_token_[kBos] != kBosToken || id_to_token_[kEos] != kEosToken ||
        id_to_token_[kUnk] != kUnkToken)
      throw DataError("vocabulary must start with <pad> <s> </s> <unk>");
    for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
      if (!token_to_id_.emplace(id_to_token_[i], static_cast<int>(i)).second)
        throw DataError("duplicate vocabulary token: " + id_to_token_[i]);
      const auto& t = id_to_token_[i];
      if (t.size() > 4 && t.starts_with("__") && t.ends_with("__"))
        languages_.push_back(t.substr(2, t.size() - 4));
    }
    for (std::size_t r = 0; r < merges_.size(); ++r)
      ranks_.emplace(merges_[r], static_cast<int>(r));
  }

  const std::vector<SymbolPair>& merges() const noexcept { return merges_; }
  std::size_t vocab_size() const noexcept { return id_to_token_.size(); }
  const std::vector<std::string>& languages() const noexcept { return languages_; }
  const std::vector<std::string>& id_to_token() const noexcept { return id_to_token_; }

  int id(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? kUnk : it->second;
  }
  bool contains(std::string_view token) const {
    return token_to_id_.contains(std::string(token));
  }
  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
      throw DataError("token id " + std::to_string(id) + " out of range");
    return id_to_token_[static_cast<std::size_t>(id)];
  }
  std::optional<int> lang_code_id(std::string_view lang) const {
    auto it = token_to_id_.find(lang_code_token(lang));
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
  }
  bool is_special(int id) const {
    if (id >= 0 && id <= kUnk) return true;
    const auto& t = token(id);
    return t.size() > 4 && t.starts_with("__") && t.ends_with("__");
  }
  // A single character, with or without the end-of-word marker.
  bool is_character(int id) const {
    if (is_special(id)) return false;
    std::string_view t = token(id);
    if (ends_with_marker(t)) t.remove_suffix(kEndOfWord.size());
    return utf8::chars(t).size() == 1;
  }
  int merge_rank(const SymbolPair& p) const {
    auto it = ranks_.find(p);
    return it == ranks_.end() ? std::numeric_limits<int>::max() : it->second;
  }

 private:
  void add_specials(const std::vector<std::string>& languages) {
    for (auto t : {kPadToken, kBosToken, kEosToken, kUnkToken}) add_token(std::string(t));
    for (const auto& l : languages) {
      add_token(lang_code_token(l));
      languages_.push_back(l);
    }
  }
  void add_token(const std::string& t) {
    if (token_to_id_.emplace(t, static_cast<int>(id_to_token_.size())).second)
      id_to_token_.push_back(t);
  }

  std::vector<SymbolPair> merges_;
  std::map<SymbolPair, int> ranks_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> languages_;
};

namespace detail {

inline std::vector<std::string> initial_symbols(std::string_view word) {
  auto syms = utf8::chars(word);
  if (!syms.empty()) syms.back() += kEndOfWord;
  return syms;
}

}  // namespace detail

// Greedy pair-frequency BPE. Ties between equally frequent pairs go to the
// lexicographically smallest pair; pairs seen fewer than `min_frequency`
// times are never merged.
inline BpeModel learn_bpe(const std::vector<std::string>& corpus_lines,
                          std::size_t num_merges,
                          const std::vector<std::string>& languages = {},
                          std::size_t min_frequency = 2) {
  std::map<std::string, std::size_t> word_freq;
  for (const auto& line : corpus_lines)
    for (auto& w : split_words(line)) ++word_freq[w];
  if (word_freq.empty()) throw DataError("learn_bpe: empty corpus");

  std::set<std::string> charset;
  std::vector<std::vector<std::string>> words;
  std::vector<std::size_t> freqs;
  for (const auto& [w, f] : word_freq) {
    for (auto& c : utf8::chars(w)) charset.insert(c);
    words.push_back(detail::initial_symbols(w));
    freqs.push_back(f);
  }

  std::map<SymbolPair, long long> pair_counts;
  std::map<SymbolPair, std::set<std::size_t>> where;
  auto account = [&](std::size_t wi, long long sign) {
    const auto& s = words[wi];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      SymbolPair p{s[i], s[i + 1]};
      auto& c = pair_counts[p];
      c += sign * static_cast<long long>(freqs[wi]);
      if (sign > 0) where[p].insert(wi);
      if (c == 0) pair_counts.erase(p);
    }
  };
  for (std::size_t wi = 0; wi < words.size(); ++wi) account(wi, +1);

  std::vector<SymbolPair> merges;
  while (merges.size() < num_merges && !pair_counts.empty()) {
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it)
      if (it->second > best->second) best = it;  // strict: keeps smallest on ties
    if (best->second < static_cast<long long>(min_frequency)) break;
    const SymbolPair pair = best->first;
    merges.push_back(pair);
    const std::string joined = pair.first + pair.second;
    const auto affected = where[pair];
    for (std::size_t wi : affected) {
      account(wi, -1);
      auto& s = words[wi];
      std::vector<std::string> merged;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && s[i] == pair.first && s[i + 1] == pair.second) {
          merged.push_back(joined);
          ++i;
        } else {
          merged.push_back(s[i]);
        }
      }
      s = std::move(merged);
      account(wi, +1);
    }
    where.erase(pair);
  }
  return BpeModel(std::move(merges), {charset.begin(), charset.end()}, languages);
}

namespace detail {

// A subword symbol together with the merge that produced it, so merges can
// be undone in exactly the order they were applied.
struct MergeTree {
  struct Sym {
    std::string text;
    int left = -1, right = -1;  // child indices into `nodes`, -1 for leaves
  };
  std::vector<Sym> nodes;
  std::vector<int> roots;
};

inline MergeTree merge_word(const BpeModel& model, std::string_view word) {
  MergeTree tree;
  for (auto& s : initial_symbols(word)) {
    tree.roots.push_back(static_cast<int>(tree.nodes.size()));
    tree.nodes.push_back({std::move(s)});
  }
  while (tree.roots.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    SymbolPair best;
    for (std::size_t i = 0; i + 1 < tree.roots.size(); ++i) {
      SymbolPair p{tree.nodes[tree.roots[i]].text, tree.nodes[tree.roots[i + 1]].text};
      const int r = model.merge_rank(p);
      if (r < best_rank) {
        best_rank = r;
        best = std::move(p);
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    std::vector<int> next;
    for (std::size_t i = 0; i < tree.roots.size(); ++i) {
      if (i + 1 < tree.roots.size() && tree.nodes[tree.roots[i]].text == best.first &&
          tree.nodes[tree.roots[i + 1]].text == best.second) {
        next.push_back(static_cast<int>(tree.nodes.size()));
        tree.nodes.push_back({best.first + best.second, tree.roots[i], tree.roots[i + 1]});
        ++i;
      } else {
        next.push_back(tree.roots[i]);
      }
    }
    tree.roots = std::move(next);
  }
  return tree;
}

}  // namespace detail

// Applies the learned merges in rank order. Characters the model never saw
// come out as <unk>.
inline std::vector<std::string> apply_bpe(const BpeModel& model, std::string_view word) {
  if (word.empty()) throw ContractError("apply_bpe: empty word");
  auto tree = detail::merge_word(model, word);
  std::vector<std::string> out;
  for (int r : tree.roots) {
    const auto& t = tree.nodes[r].text;
    out.push_back(model.contains(t) ? t : std::string(kUnkToken));
  }
  return out;
}

inline std::vector<std::string> apply_bpe_line(const BpeModel& model,
                                               std::string_view line) {
  std::vector<std::string> out;
  for (const auto& w : split_words(line))
    for (auto& t : apply_bpe(model, w)) out.push_back(std::move(t));
  return out;
}

inline std::vector<int> to_ids(const BpeModel& model,
                               const std::vector<std::string>& tokens) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(model.id(t));
  return ids;
}

// Ids back to text, dropping specials.
inline std::string decode_ids(const BpeModel& model, const std::vector<int>& ids) {
  std::vector<std::string> toks;
  for (int id : ids) {
    if (id == kUnk) {
      toks.emplace_back(kUnkToken);
      continue;
    }
    if (model.is_special(id)) continue;
    toks.push_back(model.token(id));
  }
  return detokenize(toks);
}

// ---------------------------------------------------------------------------
// Per-language frequency tables and filtered vocabularies

struct FreqTable {
  std::string language;
  std::map<std::string, std::size_t> wordpiece_counts;  // BPE output tokens
  std::map<std::string, std::size_t> char_counts;       // raw characters
};

inline FreqTable count_frequencies(const BpeModel& model,
                                   const std::vector<std::string>& corpus_lines,
                                   std::string language) {
  FreqTable table;
  table.language = std::move(language);
  for (const auto& line : corpus_lines) {
    for (const auto& w : split_words(line)) {
      for (auto& c : utf8::chars(w)) ++table.char_counts[c];
      for (auto& t : apply_bpe(model, w))
        if (t != kUnkToken) ++table.wordpiece_counts[t];
    }
  }
  return table;
}

class LangVocab {
 public:
  LangVocab() = default;
  LangVocab(std::string language, std::vector<int> kept_sorted, std::size_t global_size,
            std::optional<std::size_t> max_wordpieces = std::nullopt,
            std::size_t min_frequency = 1)
      : language_(std::move(language)),
        filtered_to_global_(std::move(kept_sorted)),
        global_to_filtered_(global_size, -1),
        max_wordpieces_(max_wordpieces),
        min_frequency_(min_frequency) {
    std::sort(filtered_to_global_.begin(), filtered_to_global_.end());
    filtered_to_global_.erase(
        std::unique(filtered_to_global_.begin(), filtered_to_global_.end()),
        filtered_to_global_.end());
    for (std::size_t j = 0; j < filtered_to_global_.size(); ++j) {
      const int g = filtered_to_global_[j];
      if (g < 0 || static_cast<std::size_t>(g) >= global_size)
        throw DataError("kept index " + std::to_string(g) + " outside vocabulary of " +
                        std::to_string(global_size));
      global_to_filtered_[static_cast<std::size_t>(g)] = static_cast<int>(j);
    }
  }

  const std::string& language() const noexcept { return language_; }
  std::size_t size() const noexcept { return filtered_to_global_.size(); }
  std::size_t global_size() const noexcept { return global_to_filtered_.size(); }
  const std::vector<int>& filtered_to_global() const noexcept { return filtered_to_global_; }
  int to_global(int filtered) const {
    return filtered_to_global_.at(static_cast<std::size_t>(filtered));
  }
  // -1 when the global token is not kept.
  int to_filtered(int global) const {
    if (global < 0 || static_cast<std::size_t>(global) >= global_to_filtered_.size())
      return -1;
    return global_to_filtered_[static_cast<std::size_t>(global)];
  }
  bool keeps(int global) const { return to_filtered(global) >= 0; }
  std::optional<std::size_t> max_wordpieces() const noexcept { return max_wordpieces_; }
  std::size_t min_frequency() const noexcept { return min_frequency_; }

 private:
  std::string language_;
  std::vector<int> filtered_to_global_;
  std::vector<int> global_to_filtered_;
  std::optional<std::size_t> max_wordpieces_;
  std::size_t min_frequency_ = 1;
};

// kept = specials + characters seen at least K times + the N most frequent
// wordpieces among those seen at least K times. Ties at the cut go to the
// lower global index.
inline LangVocab build_lang_vocab(const BpeModel& model, const FreqTable& freqs,
                                  std::size_t min_frequency,
                                  std::optional<std::size_t> max_wordpieces = std::nullopt) {
  if (min_frequency < 1) throw ConfigError("build_lang_vocab: K must be >= 1");
  if (max_wordpieces && *max_wordpieces < 1)
    throw ConfigError("build_lang_vocab: N must be >= 1");
  std::vector<int> kept;
  for (std::size_t id = 0; id < model.vocab_size(); ++id)
    if (model.is_special(static_cast<int>(id))) kept.push_back(static_cast<int>(id));
  for (const auto& [c, n] : freqs.char_counts) {
    if (n < min_frequency) continue;
    for (const auto& form : {c, c + std::string(kEndOfWord)})
      if (model.contains(form)) kept.push_back(model.id(form));
  }
  std::vector<std::pair<std::size_t, int>> pieces;  // (count, global id)
  for (const auto& [tok, n] : freqs.wordpiece_counts) {
    if (n < min_frequency || !model.contains(tok)) continue;
    const int id = model.id(tok);
    if (model.is_special(id) || model.is_character(id)) continue;
    pieces.emplace_back(n, id);
  }
  std::sort(pieces.begin(), pieces.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  if (max_wordpieces && pieces.size() > *max_wordpieces) pieces.resize(*max_wordpieces);
  for (const auto& p : pieces) kept.push_back(p.second);
  return LangVocab(freqs.language, std::move(kept), model.vocab_size(), max_wordpieces,
                   min_frequency);
}

// Every global token kept; used as the "no filtering" vocabulary.
inline LangVocab full_lang_vocab(const BpeModel& model, std::string language) {
  std::vector<int> all(model.vocab_size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return LangVocab(std::move(language), std::move(all), model.vocab_size());
}

// Regular BPE, then any produced token missing from `vocab` is split back
// into the two symbols it was merged from, recursively. Characters the
// vocabulary does not keep become <unk>.
inline std::vector<std::string> apply_bpe_constrained(const BpeModel& model,
                                                      std::string_view word,
                                                      const LangVocab& vocab) {
  if (word.empty()) throw ContractError("apply_bpe_constrained: empty word");
  auto tree = detail::merge_word(model, word);
  std::vector<std::string> out;
  auto emit = [&](auto&& self, int node) -> void {
    const auto& sym = tree.nodes[static_cast<std::size_t>(node)];
    const bool known = model.contains(sym.text);
    if (known && vocab.keeps(model.id(sym.text))) {
      out.push_back(sym.text);
    } else if (sym.left >= 0) {
      self(self, sym.left);
      self(self, sym.right);
    } else {
      out.emplace_back(kUnkToken);
    }
  };
  for (int r : tree.roots) emit(emit, r);
  return out;
}

inline std::vector<std::string> apply_bpe_constrained_line(const BpeModel& model,
                                                           std::string_view line,
                                                           const LangVocab& vocab) {
  std::vector<std::string> out;
  for (const auto& w : split_words(line))
    for (auto& t : apply_bpe_constrained(model, w, vocab)) out.push_back(std::move(t));
  return out;
}

// ---------------------------------------------------------------------------
// File formats

inline void save_merges(const BpeModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& [l, r] : model.merges()) out << l << ' ' << r << '\n';
}

inline std::vector<SymbolPair> load_merges(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<SymbolPair> merges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto parts = split_words(line);
    if (parts.size() != 2)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 'left right'");
    merges.emplace_back(parts[0], parts[1]);
  }
  return merges;
}

inline void save_vocab(const BpeModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  const auto& toks = model.id_to_token();
  for (std::size_t i = 0; i < toks.size(); ++i) out << toks[i] << '\t' << i << '\n';
}

inline BpeModel load_bpe(const std::string& merges_path, const std::string& vocab_path) {
  auto merges = load_merges(merges_path);
  std::ifstream in(vocab_path);
  if (!in) throw DataError("cannot read " + vocab_path);
  std::vector<std::pair<int, std::string>> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw DataError(vocab_path + ": expected token<TAB>index");
    entries.emplace_back(std::stoi(line.substr(tab + 1)), line.substr(0, tab));
  }
  std::sort(entries.begin(), entries.end());
  std::vector<std::string> id_to_token;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first != static_cast<int>(i))
      throw DataError(vocab_path + ": indices must be dense from 0");
    id_to_token.push_back(std::move(entries[i].second));
  }
  return BpeModel(std::move(merges), std::move(id_to_token));
}

inline void save_lang_vocab(const LangVocab& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << vocab.language() << '\n';
  for (int g : vocab.filtered_to_global()) out << g << '\n';
}

inline LangVocab load_lang_vocab(const std::string& path, std::size_t global_size) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::string language;
  if (!std::getline(in, language) || language.empty())
    throw DataError(path + ": missing language header");
  std::vector<int> kept;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) kept.push_back(std::stoi(line));
  return LangVocab(language, std::move(kept), global_size);
}

}  // namespace lightnmt
