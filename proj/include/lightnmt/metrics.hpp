#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <regex>
#include <string>
#include <vector>

#include "lightnmt/corpus.hpp"
#include "lightnmt/error.hpp"
#include "lightnmt/subword.hpp"

namespace lightnmt {

// ---------------------------------------------------------------------------
// BLEU

enum class BleuTokenize {
  kNone,  // whitespace split only
  kIntl   // punctuation splitting compatible with the mteval 13a rules
};

inline BleuTokenize parse_bleu_tokenize(const std::string& s) {
  if (s == "none") return BleuTokenize::kNone;
  if (s == "intl" || s == "13a") return BleuTokenize::kIntl;
  throw ConfigError("BLEU tokenization must be none or intl, got '" + s + "'");
}

enum class BleuSmoothing {
  kNone,  // any zero n-gram precision gives 0
  kExp    // k-th zero precision becomes 1 / (2^k * total)
};

inline BleuSmoothing parse_bleu_smoothing(const std::string& s) {
  if (s == "none") return BleuSmoothing::kNone;
  if (s == "exp") return BleuSmoothing::kExp;
  throw ConfigError("BLEU smoothing must be none or exp, got '" + s + "'");
}

// mteval-v13a style splitting of punctuation and symbols.
inline std::string tokenize_13a(std::string line) {
  static const std::regex kSymbols(R"(([{-~\[-` -&(-+:-@/]))");
  static const std::regex kPeriodCommaUnlessPrecededByDigit(R"(([^0-9])([\.,]))");
  static const std::regex kPeriodCommaUnlessFollowedByDigit(R"(([\.,])([^0-9]))");
  static const std::regex kDashPrecededByDigit(R"(([0-9])(-))");
  static const std::regex kSpaces(R"(\s+)");
  for (auto [from, to] : {std::pair<const char*, const char*>{"&quot;", "\""}, {"&amp;", "&"},
                          {"&lt;", "<"}, {"&gt;", ">"}}) {
    for (std::size_t p; (p = line.find(from)) != std::string::npos;)
      line.replace(p, std::string_view(from).size(), to);
  }
  line = " " + line + " ";
  line = std::regex_replace(line, kSymbols, " $1 ");
  line = std::regex_replace(line, kPeriodCommaUnlessPrecededByDigit, "$1 $2 ");
  line = std::regex_replace(line, kPeriodCommaUnlessFollowedByDigit, " $1 $2");
  line = std::regex_replace(line, kDashPrecededByDigit, "$1 $2 ");
  line = std::regex_replace(line, kSpaces, " ");
  const auto b = line.find_first_not_of(' ');
  if (b == std::string::npos) return "";
  return line.substr(b, line.find_last_not_of(' ') - b + 1);
}

struct BleuScore {
  double score = 0;  // [0, 100]
  std::array<std::size_t, 4> matches{}, totals{};
  std::array<double, 4> precisions{};  // percent
  double brevity_penalty = 0;
  std::size_t hyp_len = 0, ref_len = 0;
};

namespace detail {
inline std::map<std::vector<std::string>, std::size_t> ngram_counts(
    const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                   toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

inline void require_aligned(std::size_t hyps, std::size_t refs, const char* metric) {
  if (hyps != refs)
    throw DataError(std::string(metric) + ": " + std::to_string(hyps) + " hypotheses vs " +
                    std::to_string(refs) + " references");
  if (hyps == 0) throw DataError(std::string(metric) + ": empty corpus");
}
}  // namespace detail

// Corpus BLEU-4 with one reference per line.
inline BleuScore bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                      BleuTokenize tok = BleuTokenize::kNone,
                      BleuSmoothing smoothing = BleuSmoothing::kExp) {
  detail::require_aligned(hyps.size(), refs.size(), "bleu");
  BleuScore s;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = split_words(tok == BleuTokenize::kIntl ? tokenize_13a(hyps[i]) : hyps[i]);
    const auto r = split_words(tok == BleuTokenize::kIntl ? tokenize_13a(refs[i]) : refs[i]);
    s.hyp_len += h.size();
    s.ref_len += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hc = detail::ngram_counts(h, n), rc = detail::ngram_counts(r, n);
      for (const auto& [g, c] : hc) {
        s.totals[n - 1] += c;
        auto it = rc.find(g);
        if (it != rc.end()) s.matches[n - 1] += std::min(c, it->second);
      }
    }
  }
  double smooth = 1.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    if (s.totals[n] == 0) {
      zero = true;
      break;
    }
    if (s.matches[n] > 0) {
      s.precisions[n] = 100.0 * static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]);
    } else if (smoothing == BleuSmoothing::kExp) {
      smooth *= 2;
      s.precisions[n] = 100.0 / (smooth * static_cast<double>(s.totals[n]));
    } else {
      zero = true;
    }
  }
  if (s.hyp_len == 0) {
    s.brevity_penalty = 0;
  } else {
    s.brevity_penalty = s.hyp_len < s.ref_len
                            ? std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len))
                            : 1.0;
  }
  if (zero || s.hyp_len == 0) return s;
  double log_sum = 0;
  for (double p : s.precisions) log_sum += std::log(p / 100.0);
  s.score = 100.0 * s.brevity_penalty * std::exp(log_sum / 4.0);
  return s;
}

// ---------------------------------------------------------------------------
// chrF

struct ChrfScore {
  double score = 0;  // [0, 1]
  double precision = 0, recall = 0;
  std::size_t effective_order = 0;
};

// Character n-gram F-beta: precision and recall are each averaged over the
// orders 1..n that occur in both hypothesis and reference, then combined.
// Whitespace is ignored. Statistics are summed over the corpus.
inline ChrfScore chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                      std::size_t n = 6, double beta = 2.0) {
  detail::require_aligned(hyps.size(), refs.size(), "chrf");
  if (n < 1) throw ConfigError("chrf: n must be >= 1");
  std::vector<std::size_t> match(n), hyp_total(n), ref_total(n);
  auto strip = [](const std::string& s) {
    std::vector<std::string> out;
    for (auto& c : utf8::chars(s))
      if (c != " " && c != "\t" && c != "\n" && c != "\r") out.push_back(c);
    return out;
  };
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = strip(hyps[i]), r = strip(refs[i]);
    for (std::size_t k = 1; k <= n; ++k) {
      const auto hc = detail::ngram_counts(h, k), rc = detail::ngram_counts(r, k);
      for (const auto& [g, c] : hc) {
        hyp_total[k - 1] += c;
        auto it = rc.find(g);
        if (it != rc.end()) match[k - 1] += std::min(c, it->second);
      }
      for (const auto& [g, c] : rc) ref_total[k - 1] += c;
    }
  }
  ChrfScore s;
  double p = 0, r = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (hyp_total[k] == 0 || ref_total[k] == 0) continue;
    p += static_cast<double>(match[k]) / static_cast<double>(hyp_total[k]);
    r += static_cast<double>(match[k]) / static_cast<double>(ref_total[k]);
    ++s.effective_order;
  }
  if (s.effective_order == 0) return s;
  s.precision = p / static_cast<double>(s.effective_order);
  s.recall = r / static_cast<double>(s.effective_order);
  const double b2 = beta * beta;
  const double denom = b2 * s.precision + s.recall;
  s.score = denom > 0 ? (1 + b2) * s.precision * s.recall / denom : 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Robustness

struct ConsistencyScore {
  double value = 0;    // BLEU(noisy, reference = clean)
  double reverse = 0;  // BLEU(clean, reference = noisy)
};

inline ConsistencyScore bleu_consistency(const std::vector<std::string>& clean_hyps,
                                         const std::vector<std::string>& noisy_hyps,
                                         BleuTokenize tok = BleuTokenize::kNone,
                                         BleuSmoothing smoothing = BleuSmoothing::kExp) {
  return {bleu(noisy_hyps, clean_hyps, tok, smoothing).score,
          bleu(clean_hyps, noisy_hyps, tok, smoothing).score};
}

// ---------------------------------------------------------------------------
// Scoreboard

struct Scoreboard {
  double to_pivot = 0, from_pivot = 0, non_pivot = 0;  // averages
  std::size_t n_to = 0, n_from = 0, n_non = 0;
};

// Averages per-direction scores into into-pivot, out-of-pivot and
// non-pivot groups (a group with no directions averages to 0).
inline Scoreboard make_scoreboard(const std::map<LanguagePair, double>& scores,
                                  const std::string& pivot = kEnglish) {
  Scoreboard b;
  for (const auto& [dir, v] : scores) {
    if (dir.second == pivot) {
      b.to_pivot += v;
      ++b.n_to;
    } else if (dir.first == pivot) {
      b.from_pivot += v;
      ++b.n_from;
    } else {
      b.non_pivot += v;
      ++b.n_non;
    }
  }
  if (b.n_to) b.to_pivot /= static_cast<double>(b.n_to);
  if (b.n_from) b.from_pivot /= static_cast<double>(b.n_from);
  if (b.n_non) b.non_pivot /= static_cast<double>(b.n_non);
  return b;
}

}  // namespace lightnmt
