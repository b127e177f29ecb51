#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gbemt/errors.hpp"
#include "gbemt/metrics.hpp"
#include "support/metric_oracles.hpp"
#include "support/temp_dir.hpp"

using namespace gbemt;
using gbemt::testing::words_of;

TEST(Tokenize13a, GoldenFixtures) {
  EXPECT_EQ(tokenize_13a("Hello, world!"), "Hello , world !");
  EXPECT_EQ(tokenize_13a("It costs $3.50."), "It costs $ 3.50 .");
  EXPECT_EQ(tokenize_13a("1,000 people"), "1,000 people");
  EXPECT_EQ(tokenize_13a("don't stop"), "don't stop");
  EXPECT_EQ(tokenize_13a("e-mail"), "e-mail");
  EXPECT_EQ(tokenize_13a("pages 5-6"), "pages 5 - 6");
  EXPECT_EQ(tokenize_13a("a/b (c)"), "a / b ( c )");
  EXPECT_EQ(tokenize_13a("&quot;hi&quot; &amp; bye"), "\" hi \" & bye");
  EXPECT_EQ(tokenize_13a("  spaced \t out  "), "spaced out");
  EXPECT_EQ(tokenize_13a(""), "");
  EXPECT_EQ(tokenize_13a("Ɖe ŋutɔ."), "Ɖe ŋutɔ .");
}

TEST(Bleu, IdenticalCorpusIsHundred) {
  const std::vector<std::string> c{"the cat sat on the mat", "a dog ran far away today"};
  EXPECT_NEAR(bleu(c, c).score, 100.0, 1e-9);
}

TEST(Bleu, ClippedUnigramPrecision) {
  const BleuResult r = bleu({"the the the the"}, {"the cat"});
  EXPECT_EQ(r.matches[0], 1u);
  EXPECT_EQ(r.totals[0], 4u);
  const auto h = words_of("the the the the"), ref = words_of("the cat");
  EXPECT_EQ(gbemt::testing::clipped(h, ref, 1), 1u);
}

TEST(Bleu, BrevityPenaltyExample) {
  const BleuResult r = bleu({"a b c d e"}, {"a b c d e f"});
  for (double p : r.precisions) EXPECT_NEAR(p, 100.0, 1e-9);
  EXPECT_NEAR(r.brevity_penalty, std::exp(1.0 - 6.0 / 5.0), 1e-12);
  EXPECT_NEAR(r.score, 81.87, 0.01);
}

TEST(Bleu, ExponentialSmoothing) {
  // unigrams 3/4, bigrams 1/3, trigrams 0/2 -> 1/(2*2), 4-grams 0/1 -> 1/(4*1)
  const BleuResult r = bleu({"a b x c"}, {"a b y c"});
  EXPECT_NEAR(r.precisions[0], 75.0, 1e-9);
  EXPECT_NEAR(r.precisions[1], 100.0 / 3.0, 1e-9);
  EXPECT_NEAR(r.precisions[2], 25.0, 1e-9);
  EXPECT_NEAR(r.precisions[3], 25.0, 1e-9);
  EXPECT_NEAR(r.score, 100.0 * std::pow(0.75 / 3.0 * 0.25 * 0.25, 0.25), 1e-9);
}

TEST(Bleu, ShortHypothesisWithoutFourGramsScoresZero) {
  EXPECT_EQ(bleu({"a b"}, {"a b"}).score, 0.0);
}

TEST(Bleu, EmptyHypothesisCorpusIsDegenerate) {
  const BleuResult r = bleu({"", ""}, {"a b", "c"});
  EXPECT_EQ(r.score, 0.0);
  EXPECT_TRUE(r.degenerate);
}

TEST(Bleu, LengthMismatchIsPairingError) {
  EXPECT_THROW(bleu({"a"}, {"a", "b"}), PairingError);
  EXPECT_THROW(chrf({"a"}, {}), PairingError);
  EXPECT_THROW(ter({}, {"a"}), PairingError);
}

TEST(Bleu, CaseSensitive) {
  EXPECT_LT(bleu({"The cat sat down"}, {"the cat sat down"}).score, 100.0);
}

TEST(Bleu, BrevityPenaltyDecreasesWithTruncation) {
  const std::string ref = "w1 w2 w3 w4 w5 w6 w7 w8 w9 w10 w11 w12";
  const auto words = words_of(ref);
  double prev_bp = 2.0;
  for (std::size_t len = words.size(); len >= 4; --len) {
    std::string hyp;
    for (std::size_t i = 0; i < len; ++i) hyp += (i ? " " : "") + words[i];
    const BleuResult r = bleu({hyp}, {ref});
    EXPECT_LT(r.brevity_penalty, prev_bp) << len;
    prev_bp = r.brevity_penalty;
  }
}

TEST(Bleu, PooledEqualsPartsWhenIdentical) {
  const std::vector<std::string> h{"a b c d e", "p q r s t"}, r{"a b c d e f", "p q r s t u"};
  const double part = bleu({h[0]}, {r[0]}).score;
  EXPECT_NEAR(bleu({h[1]}, {r[1]}).score, part, 1e-12);
  EXPECT_NEAR(bleu(h, r).score, part, 1e-12);
}

TEST(Chrf, Examples) {
  EXPECT_NEAR(chrf({"same text"}, {"same text"}).score, 100.0, 1e-9);
  EXPECT_NEAR(chrf({"abc"}, {"xyz"}).score, 0.0, 1e-12);
  const ChrfResult r = chrf({"abc"}, {"abd"});
  EXPECT_EQ(r.effective_order, 3u);
  EXPECT_NEAR(r.precision, 7.0 / 18.0, 1e-12);
  EXPECT_NEAR(r.recall, 7.0 / 18.0, 1e-12);
  EXPECT_NEAR(r.score, 38.89, 0.01);
}

TEST(Chrf, IgnoresWhitespace) {
  EXPECT_NEAR(chrf({"a bc"}, {"ab c"}).score, 100.0, 1e-9);
}

TEST(Chrf, RecallWeighted) {
  // hyp is a prefix: precision 1, recall below 1; β = 2 pulls the score towards recall
  const ChrfResult r = chrf({"abcd"}, {"abcdefgh"});
  EXPECT_NEAR(r.precision, 1.0, 1e-12);
  EXPECT_LT(r.recall, 1.0);
  EXPECT_LT(r.score / 100.0, (r.precision + r.recall) / 2.0);
}

TEST(Ter, Examples) {
  EXPECT_EQ(ter({"a b c"}, {"a b c"}).score, 0.0);
  EXPECT_NEAR(ter({"a b c d"}, {"a b x d"}).score, 25.0, 1e-9);
  const TerEdits e = ter_edits(words_of("d a b c"), words_of("a b c d"));
  EXPECT_EQ(e.shifts, 1u);
  EXPECT_EQ(e.edit_distance, 0u);
  EXPECT_NEAR(ter({"d a b c"}, {"a b c d"}).score, 25.0, 1e-9);
}

TEST(Ter, EditDistanceOracle) {
  const auto a = words_of("the cat sat on a mat"), b = words_of("a cat sat upon the mat today");
  EXPECT_EQ(edit_distance(a, b), gbemt::testing::oracle_edit_distance(a, b));
  EXPECT_EQ(edit_distance({}, b), b.size());
  EXPECT_EQ(edit_distance(a, {}), a.size());
}

TEST(Ter, EmptyReferenceIsDegenerate) {
  const TerResult r = ter({"a b c"}, {""});
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.edits, 3u);
  EXPECT_NEAR(r.score, 300.0, 1e-9);
}

TEST(Ter, ShiftOutsideReferenceIsNotAllowed) {
  // "z" occurs nowhere in the reference, so it can only be deleted
  const TerEdits e = ter_edits(words_of("z a b"), words_of("a b"));
  EXPECT_EQ(e.shifts, 0u);
  EXPECT_EQ(e.edits(), 1u);
}

TEST(Ter, NeverAboveUnshiftedEditDistance) {
  const auto [hyps, refs] = gbemt::testing::synthetic_metric_corpus(11, 40);
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = words_of(hyps[i]), r = words_of(refs[i]);
    EXPECT_LE(ter_edits(h, r).edits(), edit_distance(h, r)) << hyps[i] << " | " << refs[i];
  }
}

TEST(MetricOracles, SyntheticCorpusAgrees) {
  const auto [hyps, refs] = gbemt::testing::synthetic_metric_corpus(2024);
  ASSERT_EQ(hyps.size(), 50u);
  EXPECT_NEAR(bleu(hyps, refs).score, gbemt::testing::oracle_bleu(hyps, refs), 0.01);
  EXPECT_NEAR(chrf(hyps, refs).score, gbemt::testing::oracle_chrf(hyps, refs), 0.01);
  EXPECT_NEAR(ter(hyps, refs).score, gbemt::testing::oracle_ter(hyps, refs), 0.01);
}

TEST(MetricProperties, PermutationInvariant) {
  auto [hyps, refs] = gbemt::testing::synthetic_metric_corpus(7, 30);
  const double b = bleu(hyps, refs).score, c = chrf(hyps, refs).score, t = ter(hyps, refs).score;
  std::vector<std::size_t> order(hyps.size());
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  std::rotate(order.begin(), order.begin() + 7, order.end());
  std::vector<std::string> ph, pr;
  for (std::size_t i : order) {
    ph.push_back(hyps[i]);
    pr.push_back(refs[i]);
  }
  EXPECT_EQ(bleu(ph, pr).score, b);
  EXPECT_EQ(chrf(ph, pr).score, c);
  EXPECT_EQ(ter(ph, pr).score, t);
}

TEST(MetricProperties, RangesAndIdentity) {
  const auto [hyps, refs] = gbemt::testing::synthetic_metric_corpus(99, 30);
  const double b = bleu(hyps, refs).score, c = chrf(hyps, refs).score;
  EXPECT_GE(b, 0.0);
  EXPECT_LE(b, 100.0);
  EXPECT_GE(c, 0.0);
  EXPECT_LE(c, 100.0);
  EXPECT_GE(ter(hyps, refs).score, 0.0);
  EXPECT_NEAR(bleu(refs, refs).score, 100.0, 1e-9);
  EXPECT_NEAR(chrf(refs, refs).score, 100.0, 1e-9);
  EXPECT_EQ(ter(refs, refs).score, 0.0);
}

TEST(ParseMetricList, AcceptsSubsets) {
  const MetricSelection s = parse_metric_list("ter, bleu");
  EXPECT_TRUE(s.bleu);
  EXPECT_FALSE(s.chrf);
  EXPECT_TRUE(s.ter);
  EXPECT_THROW(parse_metric_list("bleu,meteor"), ConfigError);
  EXPECT_THROW(parse_metric_list(""), ConfigError);
}

TEST(Evaluate, NoLabelsGivesOneReport) {
  const auto reps = evaluate({"a b c d"}, {"a b c d"}, nullptr, {}, "sys", "beam=1");
  ASSERT_EQ(reps.size(), 1u);
  EXPECT_EQ(reps[0].target_label, "all");
  EXPECT_EQ(reps[0].sentence_count, 1u);
}

TEST(Evaluate, SingleLabelGivesOneReport) {
  const std::vector<std::string> labels{"ewe", "ewe"};
  const auto reps = evaluate({"a", "b"}, {"a", "b"}, &labels, {}, "sys", "");
  ASSERT_EQ(reps.size(), 1u);
  EXPECT_EQ(reps[0].target_label, "ewe");
}

TEST(Evaluate, TwoLabelsGivePooledPlusEach) {
  const std::vector<std::string> hyps{"a b c d e", "p q r s", "a b c d", "x y z w"};
  const std::vector<std::string> refs{"a b c d e", "p q r t", "a b c d", "x y z w"};
  const std::vector<std::string> labels{"ewe", "fon", "ewe", "fon"};
  const auto reps = evaluate(hyps, refs, &labels, {}, "en2gbe", "beam=5");
  ASSERT_EQ(reps.size(), 3u);
  EXPECT_EQ(reps[0].target_label, "pooled (ewe/fon)");
  EXPECT_EQ(reps[1].target_label, "ewe");
  EXPECT_EQ(reps[2].target_label, "fon");
  EXPECT_EQ(reps[0].sentence_count, 4u);
  EXPECT_EQ(reps[1].sentence_count, 2u);
  EXPECT_NEAR(*reps[0].bleu, bleu(hyps, refs).score, 1e-12);
  EXPECT_NEAR(*reps[1].bleu, 100.0, 1e-9);
  EXPECT_NEAR(*reps[2].ter, ter({"p q r s", "x y z w"}, {"p q r t", "x y z w"}).score, 1e-12);
}

TEST(Evaluate, LabelCountMismatch) {
  const std::vector<std::string> labels{"ewe"};
  EXPECT_THROW(evaluate({"a", "b"}, {"a", "b"}, &labels, {}, "s", ""), PairingError);
}

TEST(Evaluate, UnselectedMetricsAreNull) {
  const auto reps = evaluate({"a b"}, {"a b"}, nullptr, parse_metric_list("chrf"), "s", "");
  const auto j = to_json(reps[0]);
  EXPECT_TRUE(j["bleu"].is_null());
  EXPECT_TRUE(j["ter"].is_null());
  EXPECT_NEAR(j["chrf"].get<double>(), 100.0, 1e-9);
  EXPECT_EQ(j["sentence_count"], 1);
  const std::string table = format_report_table(reps);
  EXPECT_NE(table.find("100.0"), std::string::npos);
}

TEST(EvaluateCorpus, ReadsFiles) {
  gbemt::testing::TempDir dir("evalcorpus");
  gbemt::testing::write_file(dir / "hyp.txt", "a b c d\nx y\n");
  gbemt::testing::write_file(dir / "ref.txt", "a b c d\nx z\n");
  gbemt::testing::write_file(dir / "lab.txt", "ewe\nfon\n");
  const auto reps = evaluate_corpus(dir / "hyp.txt", dir / "ref.txt", dir / "lab.txt", {}, "sys");
  ASSERT_EQ(reps.size(), 3u);
  EXPECT_NEAR(*reps[2].ter, 50.0, 1e-9);
  gbemt::testing::write_file(dir / "short.txt", "a b c d\n");
  EXPECT_THROW(evaluate_corpus(dir / "short.txt", dir / "ref.txt", std::nullopt, {}), PairingError);
  EXPECT_THROW(evaluate_corpus(dir / "missing.txt", dir / "ref.txt", std::nullopt, {}), IoError);
}
