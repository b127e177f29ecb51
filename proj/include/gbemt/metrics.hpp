#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace gbemt {

/// mteval-v13a tokenisation as used for BLEU and TER: unescapes a few HTML
/// entities, splits ASCII punctuation from words (periods and commas only when
/// not next to digits, hyphens after digits), and collapses whitespace.
std::string tokenize_13a(std::string_view line);

struct BleuResult {
  double score = 0.0;                     // 0..100
  std::array<double, 4> precisions{};     // percent, after smoothing
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 0.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  bool degenerate = false;                // empty hypothesis corpus
};

/// Corpus BLEU with exponential smoothing of zero-match orders: the k-th such
/// order gets precision 1 / (2^k · total_n). Case-sensitive.
BleuResult bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references);

struct ChrfResult {
  double score = 0.0;  // 0..100
  double precision = 0.0;
  double recall = 0.0;
  std::size_t effective_order = 0;
};

/// Corpus chrF (character 1..6-grams, β = 2) with whitespace removed. Orders
/// contribute only when both sides have n-grams of that length.
ChrfResult chrf(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references);

struct TerEdits {
  std::size_t shifts = 0;
  std::size_t edit_distance = 0;  // after shifting
  std::size_t ref_len = 0;

  std::size_t edits() const { return shifts + edit_distance; }
};

inline constexpr std::size_t kTerMaxShiftSize = 10;
inline constexpr std::size_t kTerMaxShiftDistance = 50;

/// Word-level Levenshtein distance with unit costs.
std::size_t edit_distance(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

/// Greedy-shift TER edits for one tokenised sentence pair. Each round tries every
/// block of at most kTerMaxShiftSize hypothesis words that also occurs in the
/// reference, moved at most kTerMaxShiftDistance positions, and applies the move
/// that lowers the edit distance most (ties: smallest start, then length, then
/// destination). Rounds stop when no move helps.
TerEdits ter_edits(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

struct TerResult {
  double score = 0.0;  // edits / reference words × 100
  std::size_t edits = 0;
  std::size_t ref_len = 0;
  bool degenerate = false;  // some reference was empty while its hypothesis was not
};

/// Corpus TER over 13a-tokenised words.
TerResult ter(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references);

struct EvalReport {
  std::string system_name;
  std::string target_label;
  std::optional<double> bleu;
  std::optional<double> chrf;
  std::optional<double> ter;
  std::size_t sentence_count = 0;
  std::string decoding_settings;
};

nlohmann::ordered_json to_json(const EvalReport& report);

struct MetricSelection {
  bool bleu = true;
  bool chrf = true;
  bool ter = true;
};

/// Parses "bleu,chrf,ter" (any subset, any order).
MetricSelection parse_metric_list(std::string_view list);

/// One report per label in order of first appearance, preceded by a pooled
/// report when there are at least two labels. Without labels: one report.
std::vector<EvalReport> evaluate(const std::vector<std::string>& hypotheses,
                                 const std::vector<std::string>& references,
                                 const std::vector<std::string>* labels, const MetricSelection& metrics,
                                 const std::string& system_name, const std::string& decoding_settings);

std::vector<EvalReport> evaluate_corpus(const std::filesystem::path& hyp_file, const std::filesystem::path& ref_file,
                                        const std::optional<std::filesystem::path>& labels_file,
                                        const MetricSelection& metrics, const std::string& system_name = "system",
                                        const std::string& decoding_settings = "");

/// Aligned text table with one decimal per score.
std::string format_report_table(const std::vector<EvalReport>& reports);

}  // namespace gbemt
