#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "gbemt/errors.hpp"
#include "gbemt/training.hpp"
#include "support/gradcheck.hpp"
#include "support/temp_dir.hpp"

namespace gbemt {
namespace {

ModelConfig tiny(std::size_t src_vocab = 11, std::size_t tgt_vocab = 13) {
  ModelConfig c;
  c.num_layers = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.num_heads = 2;
  c.max_seq_len = 12;
  c.src_vocab = src_vocab;
  c.tgt_vocab = tgt_vocab;
  c.dropout = 0.0;
  return c;
}

TEST(TrainConfig, DefaultsJsonAndValidation) {
  const TrainConfig d;
  EXPECT_EQ(d.batch_size_sentences, 300u);
  EXPECT_EQ(d.epochs, 30u);
  EXPECT_EQ(d.adam_beta2, 0.98);
  TrainConfig c;
  c.epochs = 3;
  c.checkpoint_dir = "x";
  EXPECT_EQ(train_config_from_json(to_json(c)), c);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"epoch", 3}}), ConfigError);
  c.label_smoothing = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size_sentences = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(MakeExample, AddsBosAndEos) {
  const TokenizedPair ex = make_example({5, 6}, {7, 8, 9}, 10);
  EXPECT_EQ(ex.src, (std::vector<int>{5, 6, kEosId}));
  EXPECT_EQ(ex.tgt_in, (std::vector<int>{kBosId, 7, 8, 9}));
  EXPECT_EQ(ex.tgt_out, (std::vector<int>{7, 8, 9, kEosId}));
  const TokenizedPair cut = make_example({5, 6, 7, 8}, {7, 8, 9, 10}, 3);
  EXPECT_EQ(cut.src.size(), 3u);
  EXPECT_EQ(cut.tgt_in.size(), 3u);
  EXPECT_EQ(cut.tgt_out.back(), kEosId);
}

Tensor uniform_logits(std::size_t b, std::size_t t, std::size_t v) { return Tensor(Shape{b, t, v}, 0.25); }

TEST(CrossEntropy, UniformLogits) {
  const IdBatch targets = pad_batch({{1, 2}, {3}}, kPadId);
  EXPECT_NEAR(cross_entropy(uniform_logits(2, 2, 4), targets, kPadId, 0.0), std::log(4.0), 1e-12);
  EXPECT_NEAR(cross_entropy(uniform_logits(2, 2, 4), targets, kPadId, 0.1), 1.386294, 1e-6);
}

TEST(CrossEntropy, Saturation) {
  Tensor logits(Shape{1, 1, 4}, 0.0);
  logits[2] = 1000.0;
  IdBatch targets = pad_batch({{2}}, kPadId);
  EXPECT_LT(cross_entropy(logits, targets, kPadId, 0.0), 1e-6);
}

TEST(CrossEntropy, AllPadIsDegenerate) {
  IdBatch targets = pad_batch({{0, 0}}, kPadId);
  EXPECT_THROW(cross_entropy(uniform_logits(1, 2, 4), targets, kPadId, 0.0), DegenerateBatchError);
}

TEST(CrossEntropy, AppendedPadsChangeNothing) {
  SplitMix64 rng(4);
  Tensor logits = testing::random_tensor({2, 3, 5}, rng);
  const IdBatch targets = pad_batch({{1, 4, 2}, {3, 3}}, kPadId);
  const double base = cross_entropy(logits, targets, kPadId, 0.1);

  Tensor longer(Shape{2, 5, 5});
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < 5; ++t) {
      for (std::size_t v = 0; v < 5; ++v) {
        longer[(b * 5 + t) * 5 + v] = t < 3 ? logits[(b * 3 + t) * 5 + v] : 2.0 * rng.uniform() - 1.0;
      }
    }
  }
  const IdBatch padded = pad_batch({{1, 4, 2, 0, 0}, {3, 3, 0, 0, 0}}, kPadId);
  EXPECT_EQ(cross_entropy(longer, padded, kPadId, 0.1), base);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  SplitMix64 rng(8);
  const std::vector<int> targets{3, 0, 1, 4, 2, 0};
  const double err = testing::max_gradient_error(
      [&](Tape&, const std::vector<Var>& v) { return cross_entropy(v[0], targets, kPadId, 0.1); },
      {testing::random_tensor({6, 5}, rng)});
  EXPECT_LT(err, 1e-5);
}

TEST(LrSchedule, Examples) {
  EXPECT_NEAR(lr_schedule(1, 512, 4000), std::pow(512.0, -0.5) * std::pow(4000.0, -1.5), 1e-20);
  EXPECT_NEAR(lr_schedule(1, 512, 4000), 1.746e-7, 1e-10);
  const double peak = lr_schedule(4000, 512, 4000);
  EXPECT_NEAR(peak, std::pow(512.0, -0.5) * std::pow(4000.0, -0.5), 1e-18);
  EXPECT_NEAR(lr_schedule(16000, 512, 4000), peak / 2, 1e-18);
  EXPECT_THROW(lr_schedule(0, 512, 4000), ConfigError);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParameterSet p{{"w", Tensor::vector({1, -2})}};
  const ParameterSet g{{"w", Tensor::vector({0, 0})}};
  OptimizerState s;
  adam_step(p, g, s, 0.1, {});
  EXPECT_EQ(p.at("w"), Tensor::vector({1, -2}));
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, ClosedFormFirstTwoSteps) {
  ParameterSet p{{"w", Tensor::scalar(0.0)}};
  const ParameterSet g{{"w", Tensor::scalar(1.0)}};
  OptimizerState s;
  const AdamHyper h{0.9, 0.999, 1e-8};
  adam_step(p, g, s, 0.001, h);
  EXPECT_NEAR(p.at("w").item(), -0.001 / (1.0 + 1e-8), 1e-18);
  const double after_one = p.at("w").item();
  adam_step(p, g, s, 0.001, h);
  EXPECT_NEAR(p.at("w").item() - after_one, -0.001 / (1.0 + 1e-8), 1e-15);
}

std::vector<TokenizedPair> toy_pairs() {
  return {make_example({4, 5, 6}, {7, 8}, 12), make_example({6, 5}, {9, 10, 11}, 12),
          make_example({7, 8, 9, 4}, {12, 7}, 12), make_example({10}, {8}, 12)};
}

TEST(BatchGradients, LossDecreasesMonotonically) {
  const ModelConfig c = tiny();
  ParameterSet params = init_parameters(c, 5);
  const auto batch = toy_pairs();
  OptimizerState state;
  double previous = INFINITY;
  for (int step = 0; step < 10; ++step) {
    const LossAndGrads lg = batch_gradients(c, params, batch, 0.0, {});
    EXPECT_LT(lg.mean_loss(), previous) << "step " << step;
    previous = lg.mean_loss();
    adam_step(params, lg.grads, state, 1e-3, {});
  }
}

TEST(BatchGradients, GradientIsOfTheMeanLoss) {
  const ModelConfig c = tiny();
  const ParameterSet params = init_parameters(c, 6);
  const auto batch = toy_pairs();
  const LossAndGrads lg = batch_gradients(c, params, batch, 0.1, {});
  EXPECT_EQ(lg.tokens, 3u + 4u + 3u + 2u);
  EXPECT_NEAR(lg.mean_loss(), evaluate_loss(c, params, batch, 0.1), 1e-12);
  // Directional finite difference along one embedding entry.
  ParameterSet up = params, down = params;
  const double h = 1e-6;
  up.at("tgt_embedding")[9] += h;
  down.at("tgt_embedding")[9] -= h;
  const double numeric = (evaluate_loss(c, up, batch, 0.1) - evaluate_loss(c, down, batch, 0.1)) / (2 * h);
  EXPECT_NEAR(lg.grads.at("tgt_embedding")[9], numeric, 1e-6);
}

TEST(EvaluateLoss, HasNoSideEffects) {
  const ModelConfig c = tiny();
  const ParameterSet params = init_parameters(c, 7);
  const ParameterSet copy = params;
  evaluate_loss(c, params, toy_pairs(), 0.1);
  EXPECT_EQ(params, copy);
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig tc;
  tc.batch_size_sentences = 2;
  tc.epochs = epochs;
  tc.warmup_steps = 10;
  tc.seed = 3;
  return tc;
}

TEST(Train, ZeroLearningRateKeepsInitialParameters) {
  TrainConfig tc = quick_config(1);
  tc.learning_rate = 0.0;
  const TrainResult r = train(tiny(), toy_pairs(), toy_pairs(), tc);
  EXPECT_EQ(r.best.parameters, r.initial_parameters);
  EXPECT_EQ(r.best.epoch, 1u);
}

TEST(Train, DeterministicCheckpoints) {
  ModelConfig c = tiny();
  c.dropout = 0.1;
  const TrainConfig tc = quick_config(3);
  const TrainResult a = train(c, toy_pairs(), toy_pairs(), tc);
  const TrainResult b = train(c, toy_pairs(), toy_pairs(), tc);
  EXPECT_EQ(serialize_checkpoint(a.best), serialize_checkpoint(b.best));
  TrainConfig other = tc;
  other.seed = 4;
  EXPECT_NE(serialize_checkpoint(train(c, toy_pairs(), toy_pairs(), other).best), serialize_checkpoint(a.best));
}

TEST(Train, MemorizesSinglePair) {
  const std::vector<TokenizedPair> one{make_example({4, 5, 6}, {7, 8, 9}, 12)};
  TrainConfig tc = quick_config(200);
  tc.label_smoothing = 0.0;
  tc.learning_rate = 0.5;  // the unscaled schedule peaks near 0.11 at d_model 8 and overshoots
  const TrainResult r = train(tiny(), one, one, tc);
  EXPECT_LT(r.history.back().train_loss, 0.01);
  EXPECT_LT(r.best.validation_loss, 0.01);
}

TEST(Train, WritesLogAndCheckpoint) {
  testing::TempDir dir("train");
  TrainConfig tc = quick_config(2);
  tc.checkpoint_dir = dir.path().string();
  std::vector<EpochStats> seen;
  const TrainResult r = train(tiny(), toy_pairs(), toy_pairs(), tc, [&](const EpochStats& s) { seen.push_back(s); });
  ASSERT_EQ(seen.size(), 2u);
  EXPECT_EQ(seen[1].epoch, 2u);
  EXPECT_EQ(testing::read_file(dir / "best.ckpt"), serialize_checkpoint(r.best));
  std::istringstream log(testing::read_file(dir / "train.log"));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 4) << line;
  }
  EXPECT_EQ(lines, 2);
}

TEST(Train, RejectsOutOfVocabularyIds) {
  auto pairs = toy_pairs();
  pairs[0].tgt_out[0] = 40;
  EXPECT_THROW(train(tiny(), pairs, toy_pairs(), quick_config(1)), ConfigError);
  EXPECT_THROW(train(tiny(), {}, toy_pairs(), quick_config(1)), ConfigError);
}

TEST(Train, VocabMatchCheck) {
  const BpeModel src = train_bpe({"ab ab"}, 20), tgt = train_bpe({"cd cd e"}, 20);
  EXPECT_THROW(check_vocab_match(tiny(), src, tgt), ConfigError);
  EXPECT_NO_THROW(check_vocab_match(tiny(src.size(), tgt.size()), src, tgt));
}

TEST(LogLine, Format) {
  const EpochStats s{3, 1.5, 2.25, 0.001, 4.5};
  const std::string line = format_log_line(s);
  EXPECT_EQ(line.substr(0, 2), "3\t");
  EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 4);
}

}  // namespace
}  // namespace gbemt
