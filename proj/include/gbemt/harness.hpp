#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbemt/corpus.hpp"
#include "gbemt/decoding.hpp"
#include "gbemt/metrics.hpp"
#include "gbemt/model.hpp"
#include "gbemt/training.hpp"

namespace gbemt {

struct PairSpec {
  std::string name;  // also the label of this pair's rows in reports
  std::string src_file;
  std::string tgt_file;
  std::string tag;   // "<2xxx>"
  /// Held-out test files. When absent, test_size pairs are carved from the corpus.
  std::string test_src_file;
  std::string test_tgt_file;
  /// Extra target-language text used only for training the target BPE model.
  std::string bpe_extra_file;
};

struct ExperimentConfig {
  std::vector<PairSpec> pairs;
  std::string source_lang = "en";
  /// src_vocab / tgt_vocab are BPE size limits; each model uses the realised sizes.
  ModelConfig model;
  /// Target BPE limit for the multilingual model; 0 reuses model.tgt_vocab.
  std::size_t multilingual_tgt_vocab = 0;
  TrainConfig train;
  DecodeOptions decode;
  std::size_t validation_size = 1000;
  std::size_t test_size = 0;
  /// 0 keeps every filtered pair.
  std::size_t max_train_pairs = 0;
  bool multilingual = true;
  bool parallel_bilinguals = false;
  std::uint64_t seed = 42;
  std::string output_dir = "experiment";

  /// Pre-flight checks. Reads file metadata only.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// GBEMT_SEED and GBEMT_OUTPUT_DIR replace seed and output_dir when set.
void apply_env_overrides(ExperimentConfig& config);

struct DatasetSizes {
  std::string name;
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

/// Appends a row named multilingual_name holding the column sums.
std::vector<DatasetSizes> dataset_stats(const std::vector<DatasetSizes>& rows, const std::string& multilingual_name);

struct PreparedPair {
  PairSpec spec;
  ParallelCorpus train;
  ParallelCorpus valid;
  ParallelCorpus test;
  FilterReport filter;
  std::vector<std::string> bpe_extra;
};

/// Loads, filters, subsamples and splits every pair. Seeds derive from config.seed.
std::vector<PreparedPair> prepare_pairs(const ExperimentConfig& config);

struct SystemSummary {
  std::string system_name;
  std::size_t best_epoch = 0;
  double best_validation_loss = 0.0;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
};

struct ExperimentReport {
  std::uint64_t seed = 0;
  std::string decoding_settings;
  std::vector<DatasetSizes> sizes;
  std::vector<std::pair<std::string, FilterReport>> filters;
  std::vector<SystemSummary> systems;
  std::vector<EvalReport> rows;

  nlohmann::ordered_json to_json() const;
  std::string to_markdown() const;
};

/// Trains one bilingual model per pair and, when enabled, one tagged multilingual
/// model; decodes every test split and writes report.md, report.json and one
/// directory per system (tokenizers, best.ckpt, train.log, hypotheses) under
/// output_dir. Progress lines go to log when given.
ExperimentReport run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

}  // namespace gbemt
