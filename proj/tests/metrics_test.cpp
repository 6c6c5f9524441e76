// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <functional>

#include "support/tempdir.hpp"
#include "unisign/core/rng.hpp"
#include "unisign/metrics.hpp"

using namespace unisign;
using namespace unisign::metrics;

namespace {

Tokens random_tokens(Rng& rng, std::size_t max_len, std::size_t vocab) {
  Tokens t(uniform_index(rng, max_len + 1));
  for (auto& s : t) s = std::string(1, static_cast<char>('a' + uniform_index(rng, vocab)));
  return t;
}

/// Top-down memoized recursion over suffixes, independent of the library's row-rolling DP.
Index oracle_edit(const Tokens& a, const Tokens& b) {
  std::map<std::pair<std::size_t, std::size_t>, Index> memo;
  std::function<Index(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> Index {
    if (i == a.size()) return static_cast<Index>(b.size() - j);
    if (j == b.size()) return static_cast<Index>(a.size() - i);
    const auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    Index best = a[i] == b[j] ? go(i + 1, j + 1) : 1 + go(i + 1, j + 1);
    best = std::min({best, 1 + go(i + 1, j), 1 + go(i, j + 1)});
    return memo[key] = best;
  };
  return go(0, 0);
}

/// Longest common subsequence by enumerating every subsequence of `a`.
Index oracle_lcs(const Tokens& a, const Tokens& b) {
  Index best = 0;
  for (std::uint32_t mask = 0; mask < (1u << a.size()); ++mask) {
    Tokens sub;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (mask & (1u << i)) sub.push_back(a[i]);
    std::size_t k = 0;
    for (std::size_t j = 0; j < b.size() && k < sub.size(); ++j)
      if (b[j] == sub[k]) ++k;
    if (k == sub.size()) best = std::max(best, static_cast<Index>(sub.size()));
  }
  return best;
}

/// Plain-formula BLEU for one hypothesis and one reference, written from scratch.
double oracle_bleu(const Tokens& ref, const Tokens& hyp, int max_n) {
  if (hyp.empty()) return 0;
  double log_p = 0;
  for (int n = 1; n <= max_n; ++n) {
    std::vector<std::string> hg, rg;
    auto grams = [n](const Tokens& t, std::vector<std::string>& out) {
      for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= t.size(); ++i) {
        std::string g;
        for (int k = 0; k < n; ++k) g += t[i + static_cast<std::size_t>(k)] + "\x1f";
        out.push_back(g);
      }
    };
    grams(hyp, hg);
    grams(ref, rg);
    if (hg.empty()) return 0;
    double match = 0;
    for (const auto& g : hg) {
      auto it = std::find(rg.begin(), rg.end(), g);
      if (it != rg.end()) {
        ++match;
        rg.erase(it);
      }
    }
    if (match == 0) return 0;
    log_p += std::log(match / static_cast<double>(hg.size()));
  }
  const double c = static_cast<double>(hyp.size()), r = static_cast<double>(ref.size());
  return (c >= r ? 1.0 : std::exp(1 - r / c)) * std::exp(log_p / max_n);
}

}  // namespace

TEST(Wer, HandExamples) {
  EXPECT_EQ(wer({"a", "b", "c"}, {"a", "b", "c"}), 0.0);
  EXPECT_EQ(wer({"a", "b", "c", "d"}, {"a", "x", "c", "d"}), 0.25);
  EXPECT_EQ(wer({"a"}, {"x", "y", "z"}), 3.0);
  EXPECT_THROW(wer({}, {"a"}), EmptyReference);
}

TEST(Wer, MatchesRecursiveOracleAndIsSymmetricInEdits) {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    auto a = random_tokens(rng, 8, 4), b = random_tokens(rng, 8, 4);
    EXPECT_EQ(edit_distance(a, b), oracle_edit(a, b));
    if (a.empty() || b.empty()) continue;
    EXPECT_EQ(wer(a, b), static_cast<double>(oracle_edit(a, b)) / static_cast<double>(a.size()));
    EXPECT_DOUBLE_EQ(wer(a, b) * static_cast<double>(a.size()), wer(b, a) * static_cast<double>(b.size()));
  }
}

TEST(Bleu, IdentityEmptyAndBrevity) {
  const Tokens s{"the", "quick", "brown", "fox", "jumps"};
  EXPECT_DOUBLE_EQ(bleu({s}, s), 1.0);
  EXPECT_EQ(bleu({s}, {}), 0.0);
  const double expected = std::exp(1.0 - 3.0 / 2.0);
  EXPECT_NEAR(bleu({{"the", "cat", "sat"}}, {"the", "cat"}, 2), expected, 1e-15);
  EXPECT_NEAR(bleu({{"the", "cat", "sat"}}, {"the", "cat"}, 2), oracle_bleu({"the", "cat", "sat"}, {"the", "cat"}, 2), 1e-15);
  EXPECT_EQ(bleu({{"the", "cat", "sat"}}, {"the", "cat"}, 3), 0.0);
}

TEST(Bleu, MatchesFormulaOracleOnRandomPairs) {
  Rng rng(2);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto r = random_tokens(rng, 9, 3), h = random_tokens(rng, 9, 3);
    for (int n = 1; n <= 4; ++n) EXPECT_NEAR(bleu({r}, h, n), oracle_bleu(r, h, n), 1e-12);
  }
}

TEST(Bleu, ClosestReferenceLengthPrefersShorterOnTies) {
  const auto s = bleu_stats({{"a", "b"}, {"a", "b", "c", "d", "e", "f"}, {"a", "b", "c", "d"}}, {"a", "b", "c"}, 1);
  EXPECT_EQ(s.ref_len, 2);
}

TEST(Bleu, CorpusAggregatesCountsBeforeTheMean) {
  const std::vector<std::vector<Tokens>> refs{{{"a", "b", "c"}}, {{"d", "e"}}};
  const std::vector<Tokens> hyps{{"a", "b", "c"}, {"d", "x"}};
  const auto r = corpus_bleu(refs, hyps, 2);
  EXPECT_DOUBLE_EQ(r.precisions[0], 4.0 / 5.0);
  EXPECT_DOUBLE_EQ(r.precisions[1], 2.0 / 3.0);
  EXPECT_NEAR(r.score, std::sqrt(0.8 * 2.0 / 3.0), 1e-15);
  EXPECT_EQ(bleu({{"d", "e"}}, {"d", "x"}, 2), 0.0);
}

TEST(Bleu, SmoothingIsOffByDefaultAndConfigurable) {
  const Tokens ref{"a", "b", "c", "d"}, hyp{"a", "x", "c", "y"};
  EXPECT_EQ(bleu({ref}, hyp), 0.0);
  const double smoothed = bleu({ref}, hyp, 4, BleuSmoothing::exp);
  EXPECT_GT(smoothed, 0.0);
  EXPECT_NEAR(smoothed, std::pow(0.5 * (1.0 / 6.0) * (1.0 / 8.0) * (1.0 / 8.0), 0.25), 1e-12);
}

// Adding order n+1 lowers the score exactly when p_{n+1} is below the running geometric mean.
// That is the usual case but not a theorem: clipped bigram precision can beat unigram precision.
TEST(Bleu, BoundedAndOrderMonotoneExactlyWhenPrecisionsFall) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::vector<Tokens>> refs;
    std::vector<Tokens> hyps;
    for (int i = 0; i < 3; ++i) {
      refs.push_back({random_tokens(rng, 10, 3)});
      hyps.push_back(random_tokens(rng, 10, 3));
    }
    for (int n = 1; n < 4; ++n) {
      const auto lo = corpus_bleu(refs, hyps, n), hi = corpus_bleu(refs, hyps, n + 1);
      EXPECT_GE(hi.score, 0.0);
      EXPECT_LE(hi.score, 1.0);
      if (lo.score == 0) {
        EXPECT_EQ(hi.score, 0.0);
        continue;
      }
      const double running_mean = lo.score / lo.brevity_penalty;
      EXPECT_EQ(hi.score <= lo.score * (1 + 1e-12), hi.precisions[static_cast<std::size_t>(n)] <= running_mean * (1 + 1e-12));
    }
  }
  const Tokens ref{"a", "c", "a", "a"}, hyp{"b", "c", "c", "c", "c", "a", "c"};
  EXPECT_NEAR(bleu({ref}, hyp, 1), 2.0 / 7.0, 1e-15);
  EXPECT_NEAR(bleu({ref}, hyp, 2), std::sqrt(2.0 / 7.0 / 3.0), 1e-15);
  EXPECT_GT(bleu({ref}, hyp, 2), bleu({ref}, hyp, 1));
}

TEST(RougeL, IdentityDisjointAndOracle) {
  EXPECT_DOUBLE_EQ(rouge_l({"a", "b", "c"}, {"a", "b", "c"}), 1.0);
  EXPECT_EQ(rouge_l({"a", "b"}, {"c", "d"}), 0.0);
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_tokens(rng, 8, 3), b = random_tokens(rng, 8, 3);
    const Index lcs = oracle_lcs(a, b);
    EXPECT_EQ(lcs_length(a, b), lcs);
    if (lcs == 0) {
      EXPECT_EQ(rouge_l(a, b), 0.0);
      continue;
    }
    const double r = static_cast<double>(lcs) / static_cast<double>(a.size()), p = static_cast<double>(lcs) / static_cast<double>(b.size());
    EXPECT_NEAR(rouge_l(a, b), (1 + 1.44) * r * p / (r + 1.44 * p), 1e-12);
  }
}

TEST(Top1, DefinitionArithmetic) {
  const std::vector<Top1Record> recs{{"A", "A", 0}, {"A", "A", 0}, {"A", "A", 0}, {"B", "A", 1}};
  const auto t = top1(recs);
  EXPECT_DOUBLE_EQ(t.per_instance, 0.75);
  EXPECT_DOUBLE_EQ(t.per_class, 0.5);
  const auto all = top1({{"A", "A", 0}, {"B", "B", 1}});
  EXPECT_EQ(all.per_instance, 1.0);
  EXPECT_EQ(all.per_class, 1.0);
  const auto bal = top1({{"A", "A", 0}, {"A", "B", 0}, {"B", "B", 1}, {"B", "A", 1}});
  EXPECT_DOUBLE_EQ(bal.per_instance, bal.per_class);
  EXPECT_THROW(top1({}), EmptyInput);
}

TEST(Top1, PerClassIgnoresRebalancingThatKeepsAccuracy) {
  std::vector<Top1Record> recs{{"A", "A", 0}, {"A", "B", 0}, {"B", "B", 1}};
  const double before = top1(recs).per_class;
  for (int k = 0; k < 5; ++k) {
    recs.push_back({"A", "A", 0});
    recs.push_back({"A", "B", 0});
  }
  EXPECT_DOUBLE_EQ(top1(recs).per_class, before);
}

TEST(IslrMatch, ExactNearestAndTieBreak) {
  const std::vector<std::string> vocab{"cook", "book", "look", "tree"};
  EXPECT_EQ(islr_match("book", vocab), 1);
  EXPECT_EQ(islr_match("  BOOK ", vocab), 1);
  EXPECT_EQ(islr_match("boook", vocab), 1);
  EXPECT_EQ(islr_match("xook", vocab), 1);
  EXPECT_EQ(islr_match("tre", vocab), 3);
  EXPECT_THROW(islr_match("a", {}), EmptyInput);
}

TEST(Tokenization, CharactersForCjkWordsOtherwise) {
  EXPECT_EQ(tokenize_for_metrics("今天 天气好。"), (Tokens{"今", "天", "天", "气", "好"}));
  EXPECT_EQ(tokenize_for_metrics("The cat, sat!"), (Tokens{"the", "cat", "sat"}));
  EXPECT_EQ(tokenize_for_metrics("ab c", MetricTokenization::character), (Tokens{"a", "b", "c"}));
  EXPECT_THROW(parse_metric_tokenization("bpe"), ConfigError);
}

TEST(Report, TaskRelevantFieldsAndFiles) {
  const std::vector<Prediction> slt{{"c0", "the cat sat down", "the cat sat down"}, {"c1", "a dog ran home", "a dog ran home"}};
  const auto r = evaluate_texts(Task::slt, slt);
  EXPECT_EQ(r.bleu.at(4), 1.0);
  EXPECT_EQ(*r.rouge_l, 1.0);
  EXPECT_FALSE(r.wer);
  EXPECT_FALSE(r.p_i_top1);
  const auto c = evaluate_texts(Task::cslr, {{"c0", "g1 g2 g3 g4", "g1 gx g3 g4"}});
  EXPECT_EQ(*c.wer, 0.25);
  EXPECT_TRUE(c.bleu.empty());
  const auto i = evaluate_texts(Task::islr, {{"a", "book", "boook"}, {"b", "tree", "book"}}, MetricTokenization::automatic, {"book", "tree"});
  EXPECT_EQ(*i.p_i_top1, 0.5);
  EXPECT_EQ(*i.p_c_top1, 0.5);

  unisign::testing::TempDir dir;
  write_report(r, slt, dir.file("r.jsonl"), dir.file("r.txt"));
  std::ifstream js(dir.file("r.jsonl"));
  std::string line;
  std::vector<nlohmann::json> lines;
  while (std::getline(js, line)) lines.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0]["report"]["bleu"]["4"], 1.0);
  EXPECT_EQ(lines[0]["report"]["bleurt"], "unavailable");
  std::ifstream tb(dir.file("r.txt"));
  const std::string table((std::istreambuf_iterator<char>(tb)), {});
  EXPECT_NE(table.find("BLEU-4     |   100.00"), std::string::npos);
}
