#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbemt/corpus.hpp"
#include "gbemt/model.hpp"
#include "gbemt/tokenizer.hpp"

namespace gbemt {

struct TrainConfig {
  std::size_t batch_size_sentences = 300;
  std::size_t epochs = 30;
  /// Multiplier on the Noam schedule; 0 freezes the parameters.
  double learning_rate = 1.0;
  std::size_t warmup_steps = 4000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double label_smoothing = 0.1;
  std::uint64_t seed = 42;
  /// When non-empty, receives best.ckpt and train.log.
  std::string checkpoint_dir;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Token ids for one sentence pair: source ends in EOS, decoder input starts with
/// BOS, decoder output ends in EOS.
struct TokenizedPair {
  std::vector<int> src;
  std::vector<int> tgt_in;
  std::vector<int> tgt_out;
};

/// Builds a training example from raw target ids; sequences are cut to max_seq_len.
TokenizedPair make_example(std::vector<int> src_ids, const std::vector<int>& tgt_ids, std::size_t max_seq_len);

std::vector<TokenizedPair> tokenize_corpus(const ParallelCorpus& corpus, const BpeModel& src_bpe,
                                           const BpeModel& tgt_bpe, std::size_t max_seq_len);

/// Mean label-smoothed cross entropy over non-pad positions of logits (B×T×V)
/// against targets (B×T). Throws DegenerateBatchError if every target is pad.
double cross_entropy(const Tensor& logits, const IdBatch& targets, int pad_id, double label_smoothing);

/// Differentiable version of the same loss.
Var cross_entropy(Var logits, std::span<const int> targets, int pad_id, double label_smoothing);

/// d_model^-0.5 · min(step^-0.5, step · warmup^-1.5); step >= 1.
double lr_schedule(std::size_t step, std::size_t d_model, std::size_t warmup);

struct OptimizerState {
  std::size_t step = 0;
  ParameterSet m;
  ParameterSet v;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

/// One bias-corrected Adam update at learning rate lr; state.step is incremented.
void adam_step(ParameterSet& params, const ParameterSet& grads, OptimizerState& state, double lr,
               const AdamHyper& hyper);

struct LossAndGrads {
  double loss_sum = 0.0;  // Σ token losses
  std::size_t tokens = 0;
  ParameterSet grads;     // of loss_sum / tokens

  double mean_loss() const { return tokens == 0 ? 0.0 : loss_sum / static_cast<double>(tokens); }
};

/// Teacher-forced loss and gradients of the mean token loss over a batch. Each
/// sentence runs on its own tape at its own length and gradients are summed in
/// batch order.
LossAndGrads batch_gradients(const ModelConfig& config, const ParameterSet& params,
                             std::span<const TokenizedPair> batch, double label_smoothing, const RunMode& mode);

/// Mean token loss in eval mode. Does not modify params.
double evaluate_loss(const ModelConfig& config, const ParameterSet& params, std::span<const TokenizedPair> data,
                     double label_smoothing);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

/// `epoch\ttrain_loss\tvalid_loss\tlr\tseconds`
std::string format_log_line(const EpochStats& stats);

struct TrainResult {
  Checkpoint best;
  std::vector<EpochStats> history;
  ParameterSet initial_parameters;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Runs the epoch loop and returns the checkpoint with the lowest validation loss.
/// Throws ConfigError if any token id is outside the model vocabularies.
TrainResult train(const ModelConfig& config, const std::vector<TokenizedPair>& train_set,
                  const std::vector<TokenizedPair>& valid_set, const TrainConfig& train_config,
                  const EpochCallback& on_epoch = {});

/// Checks that tokenizer vocabularies match the model config before training.
void check_vocab_match(const ModelConfig& config, const BpeModel& src_bpe, const BpeModel& tgt_bpe);

}  // namespace gbemt
