#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "lightnmt/bench.hpp"
#include "lightnmt/metrics.hpp"
#include "model_helpers.hpp"

using namespace lightnmt;

namespace {

// From-scratch chrF: per-order character n-gram tallies with plain strings,
// whitespace removed, precision and recall averaged over effective orders.
double reference_chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  const int n = 6;
  const double beta = 2;
  double match[6] = {}, ht[6] = {}, rt[6] = {};
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    std::string h, r;
    for (char c : hyps[s])
      if (c != ' ') h += c;
    for (char c : refs[s])
      if (c != ' ') r += c;
    for (int k = 1; k <= n; ++k) {
      std::map<std::string, int> hc, rc;
      for (int i = 0; i + k <= static_cast<int>(h.size()); ++i) hc[h.substr(i, k)]++;
      for (int i = 0; i + k <= static_cast<int>(r.size()); ++i) rc[r.substr(i, k)]++;
      for (auto& [g, c] : hc) {
        ht[k - 1] += c;
        if (rc.count(g)) match[k - 1] += std::min(c, rc[g]);
      }
      for (auto& [g, c] : rc) rt[k - 1] += c;
    }
  }
  double p = 0, r = 0;
  int eff = 0;
  for (int k = 0; k < n; ++k) {
    if (ht[k] == 0 || rt[k] == 0) continue;
    p += match[k] / ht[k];
    r += match[k] / rt[k];
    ++eff;
  }
  p /= eff;
  r /= eff;
  return (1 + beta * beta) * p * r / (beta * beta * p + r);
}

}  // namespace

TEST(Bleu, IdenticalCorpusScoresHundred) {
  const std::vector<std::string> x{"the cat sat on the mat", "a b c d e", "hello world again here"};
  for (auto tok : {BleuTokenize::kNone, BleuTokenize::kIntl})
    for (auto sm : {BleuSmoothing::kNone, BleuSmoothing::kExp}) EXPECT_NEAR(bleu(x, x, tok, sm).score, 100.0, 1e-9);
}

TEST(Bleu, NoFourGramOverlapIsZeroWithoutSmoothing) {
  const auto s = bleu({"a b c d e"}, {"a b c x d e"}, BleuTokenize::kNone, BleuSmoothing::kNone);
  EXPECT_EQ(s.matches[3], 0u);
  EXPECT_EQ(s.score, 0.0);
  EXPECT_GT(bleu({"a b c d e"}, {"a b c x d e"}, BleuTokenize::kNone, BleuSmoothing::kExp).score, 0.0);
}

TEST(Bleu, HandTalliedShortPair) {
  // hyp "the the cat", ref "the cat sat"
  // unigrams: the x2 (clipped to 1) + cat = 2/3; bigrams: "the cat" = 1/2;
  // trigrams 0/1; no 4-grams; equal lengths so BP = 1.
  for (auto sm : {BleuSmoothing::kNone, BleuSmoothing::kExp}) {
    const auto s = bleu({"the the cat"}, {"the cat sat"}, BleuTokenize::kNone, sm);
    EXPECT_EQ(s.matches[0], 2u);
    EXPECT_EQ(s.totals[0], 3u);
    EXPECT_EQ(s.matches[1], 1u);
    EXPECT_EQ(s.totals[1], 2u);
    EXPECT_EQ(s.matches[2], 0u);
    EXPECT_EQ(s.totals[2], 1u);
    EXPECT_EQ(s.totals[3], 0u);
    EXPECT_DOUBLE_EQ(s.brevity_penalty, 1.0);
    EXPECT_EQ(s.score, 0.0);  // no 4-gram can be formed
  }
}

TEST(Bleu, HandComputedLongerPair) {
  // precisions 5/6, 3/5, 2/4, 1/3 -> (1/12)^(1/4)
  const auto s = bleu({"the cat sat on the mat"}, {"the cat sat on a mat"});
  EXPECT_NEAR(s.score, 100.0 * std::pow(1.0 / 12.0, 0.25), 1e-4);
  // shorter hypothesis: BP = exp(1 - 6/5)
  const auto b = bleu({"the cat sat on mat"}, {"the cat sat on a mat"}, BleuTokenize::kNone,
                      BleuSmoothing::kNone);
  const double expected = 100.0 * std::exp(1.0 - 6.0 / 5.0) *
                          std::pow(5.0 / 5 * 3.0 / 4 * 2.0 / 3 * 1.0 / 2, 0.25);
  EXPECT_NEAR(b.score, expected, 1e-4);
}

TEST(Bleu, InvariantUnderConsistentReordering) {
  std::vector<std::string> h{"a b c d e f", "x y z w", "p q r s t", "m n o p q r s"};
  std::vector<std::string> r{"a b c d f f", "x y w z", "p q r s t u", "m n o q p r s"};
  const double before = bleu(h, r).score;
  std::mt19937_64 rng(3);
  std::vector<std::size_t> idx{0, 1, 2, 3};
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::string> h2, r2;
  for (auto i : idx) {
    h2.push_back(h[i]);
    r2.push_back(r[i]);
  }
  EXPECT_DOUBLE_EQ(bleu(h2, r2).score, before);
}

TEST(Bleu, Errors) {
  EXPECT_THROW(bleu({}, {}), DataError);
  EXPECT_THROW(bleu({"a"}, {"a", "b"}), DataError);
  EXPECT_THROW(parse_bleu_tokenize("zh"), ConfigError);
}

TEST(Bleu, IntlTokenizationSplitsPunctuation) {
  EXPECT_EQ(tokenize_13a("Hello, world!"), "Hello , world !");
  EXPECT_EQ(tokenize_13a("It costs 3.50 (approx.)"), "It costs 3.50 ( approx . )");
  EXPECT_EQ(tokenize_13a("1990-2000 &quot;x&quot;"), "1990 - 2000 \" x \"");
  const auto none = bleu({"Hello, world!"}, {"Hello , world !"}, BleuTokenize::kNone);
  const auto intl = bleu({"Hello, world!"}, {"Hello , world !"}, BleuTokenize::kIntl);
  EXPECT_LT(none.score, 100.0);
  EXPECT_NEAR(intl.score, 100.0, 1e-9);
}

TEST(Chrf, IdenticalIsOneAndDisjointIsZero) {
  EXPECT_NEAR(chrf({"abc def", "x"}, {"abc def", "x"}).score, 1.0, 1e-12);
  EXPECT_EQ(chrf({"abc"}, {"xyz"}).score, 0.0);
}

TEST(Chrf, MatchesIndependentReimplementation) {
  const std::vector<std::string> h{"the cat sat on the mat", "a quick brown fox"};
  const std::vector<std::string> r{"the cat is on the mat", "the quick brown dog"};
  EXPECT_NEAR(chrf(h, r).score, reference_chrf(h, r), 1e-12);
  const std::vector<std::string> h1{"kitten"}, r1{"sitting"};
  EXPECT_NEAR(chrf(h1, r1).score, reference_chrf(h1, r1), 1e-12);
}

TEST(Chrf, HandComputedSingleCharacterOrders) {
  // "ab" vs "ac": order 1: P = R = 1/2; order 2: 0/1. Averages P = R = 1/4.
  const auto s = chrf({"ab"}, {"ac"});
  EXPECT_EQ(s.effective_order, 2u);
  EXPECT_NEAR(s.precision, 0.25, 1e-12);
  EXPECT_NEAR(s.recall, 0.25, 1e-12);
  EXPECT_NEAR(s.score, 0.25, 1e-4);
}

TEST(Consistency, NoiseIgnoringModelIsHundredAndAsymmetric) {
  const std::vector<std::string> clean{"a b c d e", "f g h i j"};
  EXPECT_NEAR(bleu_consistency(clean, clean).value, 100.0, 1e-9);
  const std::vector<std::string> noisy{"a b c d", "f g h i j k l"};
  const auto c = bleu_consistency(clean, noisy);
  EXPECT_DOUBLE_EQ(c.value, bleu(noisy, clean).score);
  EXPECT_DOUBLE_EQ(c.reverse, bleu(clean, noisy).score);
  EXPECT_NE(c.value, c.reverse);
  const std::vector<std::string> a{"a b c d e"}, z{"v w x y z"};
  EXPECT_EQ(bleu_consistency(a, z, BleuTokenize::kNone, BleuSmoothing::kNone).value, 0.0);
  EXPECT_LT(bleu_consistency(a, z).value, 10.0);  // smoothing floor only
}

TEST(Scoreboard, GroupsDirectionsAroundThePivot) {
  std::map<LanguagePair, double> s{{{"fr", "en"}, 30}, {{"de", "en"}, 20},
                                   {{"en", "fr"}, 10}, {{"fr", "de"}, 4},
                                   {{"de", "fr"}, 6}};
  const auto b = make_scoreboard(s);
  EXPECT_DOUBLE_EQ(b.to_pivot, 25);
  EXPECT_DOUBLE_EQ(b.from_pivot, 10);
  EXPECT_DOUBLE_EQ(b.non_pivot, 5);
  EXPECT_EQ(b.n_to, 2u);
  EXPECT_EQ(b.n_non, 2u);
}

TEST(Wps, WordCountsAndArithmetic) {
  EXPECT_EQ(word_count({"a b  c", "", " d "}), 4u);
  int calls = 0;
  auto r = measure_wps([&] {
    ++calls;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    return std::vector<std::string>{"one two three four"};
  });
  EXPECT_EQ(calls, 3);
  EXPECT_EQ(r.words, 4u);
  EXPECT_NEAR(r.mean_wps, 4 / 0.02, 4 / 0.02 * 0.5);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(r.wps[i], 4 / r.seconds[i]);
  EXPECT_TRUE(measure_wps([] { return std::vector<std::string>{""}; }, 1).undefined);
}

TEST(Wps, IndependentOfSubwordGranularity) {
  // Same detokenized output from coarse and fine segmentations.
  const BpeModel coarse = learn_bpe({"lower lowest lower lowest"}, 50);
  const BpeModel fine = learn_bpe({"lower lowest lower lowest"}, 0);
  const std::string line = "lower lowest";
  const auto a = decode_ids(coarse, to_ids(coarse, apply_bpe_line(coarse, line)));
  const auto b = decode_ids(fine, to_ids(fine, apply_bpe_line(fine, line)));
  EXPECT_EQ(a, b);
  EXPECT_EQ(word_count({a}), word_count({b}));
  EXPECT_LT(apply_bpe_line(coarse, line).size(), apply_bpe_line(fine, line).size());
}

TEST(Profile, BucketsAreConsistent) {
  std::mt19937_64 rng(2);
  auto cfg = lightnmt::testing::tiny_config(DecoderKind::kTransformer, NormPlacement::kPost, 40);
  const auto w = build_model<float>(cfg, rng);
  const auto srcs = lightnmt::testing::random_sequences(16, 3, 9, 40, rng);
  DecodeConfig dc;
  dc.max_len = 8;
  const auto r = profile(w, srcs, dc);
  for (double v : {r.encoder, r.decoder, r.self_attn_or_rnn, r.cross_attn, r.softmax, r.beam_topk})
    EXPECT_GE(v, 0.0);
  EXPECT_LE(r.self_attn_or_rnn + r.cross_attn + r.softmax, r.decoder);
  EXPECT_LE(r.encoder + r.decoder + r.beam_topk, r.total);
  EXPECT_GT(r.timer_overhead, 0.0);
  const nlohmann::json j = r;
  EXPECT_EQ(j["config"]["beam"], 5);
  EXPECT_TRUE(j["decoder_buckets"].contains("cross_attn"));
}
