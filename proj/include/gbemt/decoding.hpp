#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gbemt/model.hpp"
#include "gbemt/tokenizer.hpp"

namespace gbemt {

struct Hypothesis {
  std::vector<int> token_ids;  // without BOS/EOS
  double log_prob = 0.0;       // summed, including the EOS step when finished by EOS
  bool finished = false;
  bool ended_with_eos = false;

  /// Generated steps, counting EOS when present.
  std::size_t length() const { return token_ids.size() + (ended_with_eos ? 1 : 0); }
  /// Length-normalised score used to rank finished hypotheses.
  double normalized_score() const { return length() == 0 ? log_prob : log_prob / static_cast<double>(length()); }
};

/// Log-probabilities over the target vocabulary for the token after `prefix`
/// (prefix excludes BOS). Entries of -inf are never chosen.
using StepScorer = std::function<std::vector<double>(std::span<const int> prefix)>;

/// Argmax decoding, ties to the lowest id, until EOS or max_output_len tokens.
std::vector<int> greedy_decode(const StepScorer& scorer, std::size_t max_output_len);

/// Beam search over summed log-probabilities; finished hypotheses are set aside and
/// the winner is the finished hypothesis with the best log_prob / length.
Hypothesis beam_search(const StepScorer& scorer, std::size_t beam_size, std::size_t max_output_len);

/// Scores continuations with a trained model; the source is encoded once.
/// PAD, UNK and BOS are excluded from generation.
class ModelScorer {
 public:
  ModelScorer(const Checkpoint& checkpoint, std::span<const int> src_ids);
  std::vector<double> operator()(std::span<const int> prefix) const;

 private:
  const Checkpoint* checkpoint_;
  Tensor memory_;
  std::size_t src_len_;
};

/// The output length is also capped at max_seq_len - 1.
std::vector<int> greedy_decode(const Checkpoint& checkpoint, std::span<const int> src_ids,
                               std::size_t max_output_len);
Hypothesis beam_search(const Checkpoint& checkpoint, std::span<const int> src_ids, std::size_t beam_size,
                       std::size_t max_output_len);

struct DecodeOptions {
  std::size_t beam_size = 5;
  /// 0 selects 1.5 × source length + 5.
  std::size_t max_output_len = 0;
};

std::size_t default_max_output_len(std::size_t src_len);

/// Source ids as fed to the encoder: optional tag, BPE pieces, EOS.
/// Throws TagError when the tag is not registered in src_bpe.
std::vector<int> encode_source(const BpeModel& src_bpe, const std::string& text,
                               const std::optional<std::string>& tag, std::size_t max_seq_len);

std::string translate(const Checkpoint& checkpoint, const BpeModel& src_bpe, const BpeModel& tgt_bpe,
                      const std::string& text, const std::optional<std::string>& tag,
                      const DecodeOptions& options = {});

}  // namespace gbemt
