#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "gbemt/decoding.hpp"
#include "gbemt/errors.hpp"
#include "gbemt/training.hpp"
#include "support/beam_table.hpp"
#include "support/model_oracles.hpp"

namespace gbemt {
namespace {

using testing::kTokA;
using testing::kTokB;

// Every EOS-terminated sequence of at most max_len steps, scored by the scorer.
void enumerate(const StepScorer& scorer, std::vector<int>& prefix, double lp, std::size_t max_len,
               std::vector<Hypothesis>& out) {
  const auto scores = scorer(prefix);
  for (std::size_t v = 0; v < scores.size(); ++v) {
    if (std::isinf(scores[v])) continue;
    if (static_cast<int>(v) == kEosId) {
      out.push_back({prefix, lp + scores[v], true, true});
    } else if (prefix.size() + 1 <= max_len) {
      prefix.push_back(static_cast<int>(v));
      if (prefix.size() == max_len) {
        out.push_back({prefix, lp + scores[v], true, false});
      } else {
        enumerate(scorer, prefix, lp + scores[v], max_len, out);
      }
      prefix.pop_back();
    }
  }
}

TEST(Greedy, TableCase) {
  EXPECT_EQ(greedy_decode(testing::beam_table_scores, 5), (std::vector<int>{kTokA, kTokA}));
  EXPECT_EQ(greedy_decode(testing::beam_table_scores, 1), (std::vector<int>{kTokA}));
}

TEST(Greedy, EosFirstGivesEmpty) {
  const StepScorer eos = [](std::span<const int>) {
    std::vector<double> lp(6, std::log(0.1));
    lp[kEosId] = std::log(0.5);
    return lp;
  };
  EXPECT_TRUE(greedy_decode(eos, 10).empty());
  EXPECT_TRUE(beam_search(eos, 3, 10).token_ids.empty());
}

TEST(Greedy, TiesGoToLowestId) {
  const StepScorer flat = [](std::span<const int> prefix) {
    std::vector<double> lp(6, prefix.size() < 2 ? std::log(0.25) : -INFINITY);
    if (prefix.size() >= 2) lp[kEosId] = 0.0;
    return lp;
  };
  EXPECT_EQ(greedy_decode(flat, 5), (std::vector<int>{0, 0}));
}

TEST(Beam, RecoversBestSequenceOfTable) {
  const Hypothesis k1 = beam_search(testing::beam_table_scores, 1, 5);
  EXPECT_EQ(k1.token_ids, greedy_decode(testing::beam_table_scores, 5));
  const Hypothesis k2 = beam_search(testing::beam_table_scores, 2, 5);
  EXPECT_EQ(k2.token_ids, (std::vector<int>{kTokB, kTokA}));
  EXPECT_NEAR(k2.log_prob, std::log(0.36), 1e-12);
  EXPECT_TRUE(k2.ended_with_eos);
  EXPECT_EQ(k2.length(), 3u);

  std::vector<Hypothesis> all;
  std::vector<int> prefix;
  enumerate(testing::beam_table_scores, prefix, 0.0, 3, all);
  const auto best = std::max_element(all.begin(), all.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return a.normalized_score() < b.normalized_score();
  });
  EXPECT_EQ(best->token_ids, k2.token_ids);
}

TEST(Beam, WidthBeyondVocabEqualsVocabWidth) {
  const Hypothesis at_vocab = beam_search(testing::beam_table_scores, 6, 5);
  for (std::size_t k : {7u, 12u, 50u}) {
    const Hypothesis h = beam_search(testing::beam_table_scores, k, 5);
    EXPECT_EQ(h.token_ids, at_vocab.token_ids);
    EXPECT_EQ(h.log_prob, at_vocab.log_prob);
  }
}

TEST(Beam, WideningNeverLowersLogProbOnTable) {
  double previous = -INFINITY;
  for (std::size_t k = 1; k <= 6; ++k) {
    const double lp = beam_search(testing::beam_table_scores, k, 5).log_prob;
    EXPECT_GE(lp, previous) << "k=" << k;
    previous = lp;
  }
}

TEST(Beam, StopsAtMaxLength) {
  const StepScorer never_eos = [](std::span<const int>) {
    std::vector<double> lp(6, -INFINITY);
    lp[kTokA] = std::log(0.7);
    lp[kTokB] = std::log(0.3);
    return lp;
  };
  const Hypothesis h = beam_search(never_eos, 3, 4);
  EXPECT_EQ(h.token_ids.size(), 4u);
  EXPECT_TRUE(h.finished);
  EXPECT_FALSE(h.ended_with_eos);
  EXPECT_EQ(greedy_decode(never_eos, 4), h.token_ids);
}

Checkpoint random_checkpoint(std::uint64_t seed) {
  SplitMix64 rng(seed);
  ModelConfig c = testing::random_config(rng);
  return {c, init_parameters(c, seed), 0, 0.0};
}

TEST(Beam, WidthOneEqualsGreedyOnRandomModels) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Checkpoint ck = random_checkpoint(seed);
    SplitMix64 rng(seed * 31);
    const auto src = testing::random_ids(1 + rng.below(6), ck.config.src_vocab, rng);
    const auto greedy = greedy_decode(ck, src, 8);
    EXPECT_EQ(beam_search(ck, src, 1, 8).token_ids, greedy) << "seed " << seed;
    for (int id : greedy) {
      EXPECT_NE(id, kPadId);
      EXPECT_NE(id, kUnkId);
      EXPECT_NE(id, kBosId);
      EXPECT_NE(id, kEosId);
    }
  }
}

TEST(Beam, Deterministic) {
  const Checkpoint ck = random_checkpoint(77);
  const std::vector<int> src{4, 5, 4};
  const Hypothesis a = beam_search(ck, src, 4, 8);
  const Hypothesis b = beam_search(ck, src, 4, 8);
  EXPECT_EQ(a.token_ids, b.token_ids);
  EXPECT_EQ(a.log_prob, b.log_prob);
}

TEST(ModelScorer, ExcludesSpecialsAndNormalizes) {
  const Checkpoint ck = random_checkpoint(5);
  const std::vector<int> src{4, 5, kEosId};
  ModelScorer scorer(ck, src);
  const std::vector<int> prefix{4};
  const auto lp = scorer(prefix);
  ASSERT_EQ(lp.size(), ck.config.tgt_vocab);
  EXPECT_TRUE(std::isinf(lp[kPadId]) && std::isinf(lp[kUnkId]) && std::isinf(lp[kBosId]));
  double total = 0;
  for (double v : lp) total += std::exp(v);
  EXPECT_LE(total, 1.0 + 1e-12);
}

TEST(DefaultMaxLength, Formula) {
  EXPECT_EQ(default_max_output_len(0), 5u);
  EXPECT_EQ(default_max_output_len(10), 20u);
  EXPECT_EQ(default_max_output_len(3), 9u);
}

class TranslateTest : public ::testing::Test {
 protected:
  void SetUp() override {
    src_bpe_ = train_bpe({"<2aa> x y z", "<2bb> x y z"}, 40, {"<2aa>", "<2bb>"});
    tgt_bpe_ = train_bpe({"p q r"}, 40);
    ModelConfig c;
    c.num_layers = 1;
    c.d_model = 8;
    c.d_ff = 8;
    c.num_heads = 2;
    c.max_seq_len = 10;
    c.src_vocab = src_bpe_.size();
    c.tgt_vocab = tgt_bpe_.size();
    ckpt_ = {c, init_parameters(c, 1), 0, 0.0};
  }
  BpeModel src_bpe_, tgt_bpe_;
  Checkpoint ckpt_;
};

TEST_F(TranslateTest, UnknownTagListsRegisteredTags) {
  try {
    translate(ckpt_, src_bpe_, tgt_bpe_, "x y", "<2cc>");
    FAIL();
  } catch (const TagError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("<2aa>"), std::string::npos);
    EXPECT_NE(msg.find("<2bb>"), std::string::npos);
  }
}

TEST_F(TranslateTest, TagIsPrependedAndEmptyInputWorks) {
  EXPECT_EQ(encode_source(src_bpe_, "x", "<2aa>", 10), (std::vector<int>{*src_bpe_.id_of("<2aa>"),
                                                                         *src_bpe_.id_of("x</w>"), kEosId}));
  EXPECT_EQ(encode_source(src_bpe_, "", std::nullopt, 10), (std::vector<int>{kEosId}));
  EXPECT_NO_THROW(translate(ckpt_, src_bpe_, tgt_bpe_, "", std::nullopt));
  const std::string a = translate(ckpt_, src_bpe_, tgt_bpe_, "x y", "<2aa>", {3, 0});
  EXPECT_EQ(a, translate(ckpt_, src_bpe_, tgt_bpe_, "x y", "<2aa>", {3, 0}));
}

}  // namespace
}  // namespace gbemt
