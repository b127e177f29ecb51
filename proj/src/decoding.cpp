#include "gbemt/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gbemt/errors.hpp"
#include "gbemt/training.hpp"

namespace gbemt {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Candidate {
  std::size_t parent;
  int token;
  double step_log_prob;
  double total;
};

// Higher total first; ties by parent rank, then step score, then lowest id. With a
// single parent this reproduces greedy argmax exactly.
bool better(const Candidate& a, const Candidate& b) {
  if (a.total != b.total) return a.total > b.total;
  if (a.parent != b.parent) return a.parent < b.parent;
  if (a.step_log_prob != b.step_log_prob) return a.step_log_prob > b.step_log_prob;
  return a.token < b.token;
}

}  // namespace

std::vector<int> greedy_decode(const StepScorer& scorer, std::size_t max_output_len) {
  std::vector<int> out;
  while (out.size() < max_output_len) {
    const auto lp = scorer(out);
    int best = -1;
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (lp[v] == kNegInf) continue;
      if (best < 0 || lp[v] > lp[static_cast<std::size_t>(best)]) best = static_cast<int>(v);
    }
    if (best < 0 || best == kEosId) break;
    out.push_back(best);
  }
  return out;
}

Hypothesis beam_search(const StepScorer& scorer, std::size_t beam_size, std::size_t max_output_len) {
  if (beam_size < 1) throw ConfigError("beam size must be >= 1");
  std::vector<Hypothesis> active{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < max_output_len && !active.empty(); ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t h = 0; h < active.size(); ++h) {
      const auto lp = scorer(active[h].token_ids);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        if (lp[v] == kNegInf) continue;
        candidates.push_back({h, static_cast<int>(v), lp[v], active[h].log_prob + lp[v]});
      }
    }
    const std::size_t keep = std::min(beam_size, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      better);
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = candidates[i];
      Hypothesis h = active[c.parent];
      h.log_prob = c.total;
      if (c.token == kEosId) {
        h.finished = true;
        h.ended_with_eos = true;
        finished.push_back(std::move(h));
      } else {
        h.token_ids.push_back(c.token);
        next.push_back(std::move(h));
      }
    }
    active = std::move(next);
  }
  for (auto& h : active) {
    h.finished = true;
    finished.push_back(std::move(h));
  }
  if (finished.empty()) return Hypothesis{{}, 0.0, true, false};
  // Stable: earlier-finished hypotheses win exact ties.
  const auto best = std::max_element(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return a.normalized_score() < b.normalized_score();
  });
  return *best;
}

ModelScorer::ModelScorer(const Checkpoint& checkpoint, std::span<const int> src_ids)
    : checkpoint_(&checkpoint), src_len_(src_ids.size()) {
  Tape tape;
  BoundParameters p(tape, checkpoint.parameters, false);
  memory_ = encode_sequence(checkpoint.config, p, src_ids, src_ids.size(), {}).value();
}

std::vector<double> ModelScorer::operator()(std::span<const int> prefix) const {
  const ModelConfig& cfg = checkpoint_->config;
  std::vector<int> tgt_in;
  tgt_in.reserve(prefix.size() + 1);
  tgt_in.push_back(kBosId);
  tgt_in.insert(tgt_in.end(), prefix.begin(), prefix.end());
  Tape tape;
  BoundParameters p(tape, checkpoint_->parameters, false);
  Var memory = tape.constant(memory_);
  Var logits = decode_sequence(cfg, p, memory, src_len_, tgt_in, tgt_in.size(), {});
  const Tensor& z = logits.value();
  const std::size_t v = z.cols();
  const double* last = z.data().data() + (z.rows() - 1) * v;
  std::vector<double> lp(v);
  double mx = kNegInf;
  for (std::size_t k = 0; k < v; ++k) {
    if (k == static_cast<std::size_t>(kPadId) || k == static_cast<std::size_t>(kUnkId) ||
        k == static_cast<std::size_t>(kBosId)) {
      continue;
    }
    mx = std::max(mx, last[k]);
  }
  double s = 0.0;
  for (std::size_t k = 0; k < v; ++k) {
    const bool banned = k == static_cast<std::size_t>(kPadId) || k == static_cast<std::size_t>(kUnkId) ||
                        k == static_cast<std::size_t>(kBosId);
    if (!banned) s += std::exp(last[k] - mx);
  }
  const double log_z = mx + std::log(s);
  for (std::size_t k = 0; k < v; ++k) {
    const bool banned = k == static_cast<std::size_t>(kPadId) || k == static_cast<std::size_t>(kUnkId) ||
                        k == static_cast<std::size_t>(kBosId);
    lp[k] = banned ? kNegInf : last[k] - log_z;
  }
  return lp;
}

std::vector<int> greedy_decode(const Checkpoint& checkpoint, std::span<const int> src_ids,
                               std::size_t max_output_len) {
  ModelScorer scorer(checkpoint, src_ids);
  return greedy_decode(StepScorer(std::cref(scorer)), std::min(max_output_len, checkpoint.config.max_seq_len - 1));
}

Hypothesis beam_search(const Checkpoint& checkpoint, std::span<const int> src_ids, std::size_t beam_size,
                       std::size_t max_output_len) {
  ModelScorer scorer(checkpoint, src_ids);
  return beam_search(StepScorer(std::cref(scorer)), beam_size,
                     std::min(max_output_len, checkpoint.config.max_seq_len - 1));
}

std::size_t default_max_output_len(std::size_t src_len) { return (3 * src_len) / 2 + 5; }

std::vector<int> encode_source(const BpeModel& src_bpe, const std::string& text,
                               const std::optional<std::string>& tag, std::size_t max_seq_len) {
  std::string input = text;
  if (tag) {
    if (!src_bpe.is_protected(*tag)) {
      std::string known;
      for (const auto& t : src_bpe.protected_tokens()) known += (known.empty() ? "" : ", ") + t;
      throw TagError("unknown language tag '" + *tag + "'; registered tags: " + (known.empty() ? "(none)" : known));
    }
    input = *tag + " " + text;
  }
  return make_example(src_bpe.encode(input), {}, max_seq_len).src;
}

std::string translate(const Checkpoint& checkpoint, const BpeModel& src_bpe, const BpeModel& tgt_bpe,
                      const std::string& text, const std::optional<std::string>& tag, const DecodeOptions& options) {
  const auto src = encode_source(src_bpe, text, tag, checkpoint.config.max_seq_len);
  std::size_t max_len = options.max_output_len == 0 ? default_max_output_len(src.size()) : options.max_output_len;
  max_len = std::min(max_len, checkpoint.config.max_seq_len - 1);
  const Hypothesis best = beam_search(checkpoint, src, options.beam_size, max_len);
  return tgt_bpe.decode(best.token_ids);
}

}  // namespace gbemt
