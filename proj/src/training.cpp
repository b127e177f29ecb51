#include "gbemt/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "gbemt/errors.hpp"
#include "gbemt/rng.hpp"
#include "json_util.hpp"

namespace gbemt {
namespace {

ParameterSet zeros_like(const ParameterSet& params) {
  ParameterSet out;
  for (const auto& [name, t] : params) out.emplace(name, Tensor(t.shape()));
  return out;
}

void check_ids_in_vocab(const std::vector<TokenizedPair>& data, const ModelConfig& cfg, const char* which) {
  for (const auto& ex : data) {
    for (int id : ex.src) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg.src_vocab) {
        throw ConfigError(std::string(which) + " set has source id " + std::to_string(id) +
                          " but model src_vocab is " + std::to_string(cfg.src_vocab));
      }
    }
    for (const auto* seq : {&ex.tgt_in, &ex.tgt_out}) {
      for (int id : *seq) {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.tgt_vocab) {
          throw ConfigError(std::string(which) + " set has target id " + std::to_string(id) +
                            " but model tgt_vocab is " + std::to_string(cfg.tgt_vocab));
        }
      }
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size_sentences < 1) throw ConfigError("batch_size_sentences must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must be in [0, 1)");
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{{"batch_size_sentences", c.batch_size_sentences},
                        {"epochs", c.epochs},
                        {"learning_rate", c.learning_rate},
                        {"warmup_steps", c.warmup_steps},
                        {"adam_beta1", c.adam_beta1},
                        {"adam_beta2", c.adam_beta2},
                        {"adam_eps", c.adam_eps},
                        {"label_smoothing", c.label_smoothing},
                        {"seed", c.seed},
                        {"checkpoint_dir", c.checkpoint_dir}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  const std::string ctx = "train config";
  detail::check_keys(j,
                     {"batch_size_sentences", "epochs", "learning_rate", "warmup_steps", "adam_beta1", "adam_beta2",
                      "adam_eps", "label_smoothing", "seed", "checkpoint_dir"},
                     ctx);
  TrainConfig c;
  detail::read_key(j, "batch_size_sentences", c.batch_size_sentences, ctx);
  detail::read_key(j, "epochs", c.epochs, ctx);
  detail::read_key(j, "learning_rate", c.learning_rate, ctx);
  detail::read_key(j, "warmup_steps", c.warmup_steps, ctx);
  detail::read_key(j, "adam_beta1", c.adam_beta1, ctx);
  detail::read_key(j, "adam_beta2", c.adam_beta2, ctx);
  detail::read_key(j, "adam_eps", c.adam_eps, ctx);
  detail::read_key(j, "label_smoothing", c.label_smoothing, ctx);
  detail::read_key(j, "seed", c.seed, ctx);
  detail::read_key(j, "checkpoint_dir", c.checkpoint_dir, ctx);
  return c;
}

TokenizedPair make_example(std::vector<int> src_ids, const std::vector<int>& tgt_ids, std::size_t max_seq_len) {
  TokenizedPair ex;
  if (src_ids.size() + 1 > max_seq_len) src_ids.resize(max_seq_len - 1);
  src_ids.push_back(kEosId);
  ex.src = std::move(src_ids);
  const std::size_t body = std::min(tgt_ids.size(), max_seq_len - 1);
  ex.tgt_in.push_back(kBosId);
  ex.tgt_in.insert(ex.tgt_in.end(), tgt_ids.begin(), tgt_ids.begin() + static_cast<std::ptrdiff_t>(body));
  ex.tgt_out.assign(tgt_ids.begin(), tgt_ids.begin() + static_cast<std::ptrdiff_t>(body));
  ex.tgt_out.push_back(kEosId);
  return ex;
}

std::vector<TokenizedPair> tokenize_corpus(const ParallelCorpus& corpus, const BpeModel& src_bpe,
                                           const BpeModel& tgt_bpe, std::size_t max_seq_len) {
  std::vector<TokenizedPair> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus.pairs) {
    out.push_back(make_example(src_bpe.encode(p.source), tgt_bpe.encode(p.target), max_seq_len));
  }
  return out;
}

double cross_entropy(const Tensor& logits, const IdBatch& targets, int pad_id, double label_smoothing) {
  if (logits.rank() != 3 || logits.dim(0) != targets.rows || logits.dim(1) != targets.cols) {
    throw ShapeError("cross_entropy: logits " + shape_string(logits.shape()) + " do not match targets [" +
                     std::to_string(targets.rows) + "x" + std::to_string(targets.cols) + "]");
  }
  Tape tape;
  Var total = cross_entropy(tape.constant(logits), targets.ids, pad_id, label_smoothing);
  return total.value().item();
}

Var cross_entropy(Var logits, std::span<const int> targets, int pad_id, double label_smoothing) {
  std::size_t count = 0;
  for (int t : targets) count += t != pad_id;
  if (count == 0) throw DegenerateBatchError("cross_entropy: every target position is padding");
  return scale(cross_entropy_sum(logits, targets, pad_id, label_smoothing), 1.0 / static_cast<double>(count));
}

double lr_schedule(std::size_t step, std::size_t d_model, std::size_t warmup) {
  if (step < 1) throw ConfigError("lr_schedule: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

void adam_step(ParameterSet& params, const ParameterSet& grads, OptimizerState& state, double lr,
               const AdamHyper& hyper) {
  if (state.m.empty()) {
    state.m = zeros_like(params);
    state.v = zeros_like(params);
  }
  ++state.step;
  const double correction1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (auto& [name, theta] : params) {
    const Tensor& g = grads.at(name);
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    if (g.shape() != theta.shape()) throw ShapeError("adam_step: gradient shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
  }
}

LossAndGrads batch_gradients(const ModelConfig& cfg, const ParameterSet& params, std::span<const TokenizedPair> batch,
                             double label_smoothing, const RunMode& mode) {
  LossAndGrads out;
  out.grads = zeros_like(params);
  for (const auto& ex : batch) out.tokens += ex.tgt_out.size();
  if (out.tokens == 0) throw DegenerateBatchError("batch has no target tokens");
  const double inv_tokens = 1.0 / static_cast<double>(out.tokens);

  // Padding never changes the non-pad logits, so each sentence runs unpadded.
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    Tape tape;
    BoundParameters p(tape, params, true);
    const RunMode item_mode{mode.training, derive_seed(mode.dropout_seed, "item/" + std::to_string(i))};
    Var memory = encode_sequence(cfg, p, ex.src, ex.src.size(), item_mode);
    Var logits = decode_sequence(cfg, p, memory, ex.src.size(), ex.tgt_in, ex.tgt_in.size(), item_mode);
    Var sentence = cross_entropy_sum(logits, ex.tgt_out, kPadId, label_smoothing);
    out.loss_sum += sentence.value().item();
    tape.backward(scale(sentence, inv_tokens));
    for (const auto& [name, var] : p.vars()) {
      const Tensor& g = var.grad();
      Tensor& acc = out.grads.at(name);
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
    }
  }
  return out;
}

double evaluate_loss(const ModelConfig& cfg, const ParameterSet& params, std::span<const TokenizedPair> data,
                     double label_smoothing) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : data) {
    Tape tape;
    BoundParameters p(tape, params, false);
    Var memory = encode_sequence(cfg, p, ex.src, ex.src.size(), {});
    Var logits = decode_sequence(cfg, p, memory, ex.src.size(), ex.tgt_in, ex.tgt_in.size(), {});
    total += cross_entropy_sum(logits, ex.tgt_out, kPadId, label_smoothing).value().item();
    tokens += ex.tgt_out.size();
  }
  if (tokens == 0) throw DegenerateBatchError("evaluation set has no target tokens");
  return total / static_cast<double>(tokens);
}

std::string format_log_line(const EpochStats& s) {
  std::ostringstream out;
  out.precision(6);
  out << s.epoch << '\t' << std::fixed << s.train_loss << '\t' << s.valid_loss << '\t' << std::scientific << s.lr
      << '\t' << std::fixed << std::setprecision(2) << s.seconds;
  return out.str();
}

void check_vocab_match(const ModelConfig& cfg, const BpeModel& src_bpe, const BpeModel& tgt_bpe) {
  if (cfg.src_vocab != src_bpe.size() || cfg.tgt_vocab != tgt_bpe.size()) {
    throw ConfigError("model vocabularies (" + std::to_string(cfg.src_vocab) + ", " + std::to_string(cfg.tgt_vocab) +
                      ") do not match tokenizers (" + std::to_string(src_bpe.size()) + ", " +
                      std::to_string(tgt_bpe.size()) + ")");
  }
}

TrainResult train(const ModelConfig& config, const std::vector<TokenizedPair>& train_set,
                  const std::vector<TokenizedPair>& valid_set, const TrainConfig& tc, const EpochCallback& on_epoch) {
  config.validate();
  tc.validate();
  if (train_set.empty() || valid_set.empty()) throw ConfigError("training and validation sets must be non-empty");
  check_ids_in_vocab(train_set, config, "training");
  check_ids_in_vocab(valid_set, config, "validation");

  ModelConfig recorded = config;
  recorded.label_smoothing = tc.label_smoothing;

  TrainResult result;
  ParameterSet params = init_parameters(config, derive_seed(tc.seed, "init"));
  result.initial_parameters = params;
  OptimizerState state;
  const AdamHyper hyper{tc.adam_beta1, tc.adam_beta2, tc.adam_eps};
  double best_loss = std::numeric_limits<double>::infinity();

  std::ofstream log;
  if (!tc.checkpoint_dir.empty()) {
    std::filesystem::create_directories(tc.checkpoint_dir);
    log.open(std::filesystem::path(tc.checkpoint_dir) / "train.log");
  }

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    SplitMix64 shuffle_rng(derive_seed(tc.seed, "shuffle/" + std::to_string(epoch)));
    const auto order = shuffled_indices(train_set.size(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t tokens = 0;
    double lr = 0.0;
    std::vector<TokenizedPair> batch;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size_sentences) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + tc.batch_size_sentences); ++i) {
        batch.push_back(train_set[order[i]]);
      }
      const RunMode mode{true, derive_seed(tc.seed, "dropout/" + std::to_string(state.step + 1))};
      LossAndGrads lg = batch_gradients(config, params, batch, tc.label_smoothing, mode);
      loss_sum += lg.loss_sum;
      tokens += lg.tokens;
      lr = tc.learning_rate * lr_schedule(state.step + 1, config.d_model, tc.warmup_steps);
      adam_step(params, lg.grads, state, lr, hyper);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(tokens);
    stats.valid_loss = evaluate_loss(config, params, valid_set, tc.label_smoothing);
    stats.lr = lr;
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.history.push_back(stats);

    if (stats.valid_loss < best_loss) {
      best_loss = stats.valid_loss;
      result.best = Checkpoint{recorded, params, epoch, stats.valid_loss};
      if (!tc.checkpoint_dir.empty()) {
        save_checkpoint(result.best, std::filesystem::path(tc.checkpoint_dir) / "best.ckpt");
      }
    }
    if (log.is_open()) log << format_log_line(stats) << '\n' << std::flush;
    if (on_epoch) on_epoch(stats);
  }
  if (result.best.parameters.empty()) throw ContractError("training diverged: validation loss was never finite");
  return result;
}

}  // namespace gbemt
