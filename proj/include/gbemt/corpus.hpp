#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace gbemt {

struct SentencePair {
  std::string source;
  std::string target;
  std::size_t origin_line = 0;  // 1-based

  bool operator==(const SentencePair&) const = default;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::string source_lang;
  std::string target_lang;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  bool operator==(const ParallelCorpus&) const = default;
};

struct FilterReport {
  std::size_t input_count = 0;
  std::size_t dropped_duplicates = 0;
  std::size_t dropped_empty = 0;
  std::size_t dropped_leaked = 0;
  std::size_t output_count = 0;

  bool operator==(const FilterReport&) const = default;

  /// `key: value` lines, one per field, in declaration order.
  std::string to_text() const;
  std::string to_json() const;
};

/// Target-language tag such as `<2ewe>`.
class LanguageTag {
 public:
  /// Builds `<2code>`; code must be non-empty lowercase ASCII letters.
  static LanguageTag for_language(const std::string& code);
  /// Parses an existing `<2xxx>` token.
  static LanguageTag parse(const std::string& token);

  const std::string& token() const { return token_; }
  std::string language() const { return token_.substr(2, token_.size() - 3); }

  bool operator==(const LanguageTag&) const = default;

 private:
  explicit LanguageTag(std::string token) : token_(std::move(token)) {}
  std::string token_;
};

/// Reads a UTF-8 text file as lines (LF-separated, trailing CR dropped, no
/// phantom line after a final newline). DecodeError names the byte offset.
std::vector<std::string> read_text_lines(const std::filesystem::path& path);

void write_text_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

/// Reads line-aligned UTF-8 files. A trailing newline does not start a new pair;
/// a trailing CR on each line is dropped.
ParallelCorpus load_parallel(const std::filesystem::path& source_path,
                             const std::filesystem::path& target_path,
                             const std::string& source_lang,
                             const std::string& target_lang);

void save_parallel(const ParallelCorpus& corpus,
                   const std::filesystem::path& source_path,
                   const std::filesystem::path& target_path);

/// Drops, in this order: pairs with an empty side, repeated pairs, pairs present in
/// `test_corpus`. Comparison uses whitespace-normalized text; stored text is trimmed.
std::pair<ParallelCorpus, FilterReport> filter_corpus(const ParallelCorpus& corpus,
                                                      const ParallelCorpus& test_corpus);

/// n pairs drawn uniformly without replacement (SplitMix64 seeded with `seed`), in corpus order.
ParallelCorpus subsample(const ParallelCorpus& corpus, std::size_t n, std::uint64_t seed);

/// Prefixes every source with its tag and concatenates the corpora in argument order.
ParallelCorpus tag_and_merge(const std::vector<std::pair<ParallelCorpus, LanguageTag>>& corpora);

struct SplitResult {
  ParallelCorpus train;
  ParallelCorpus valid;
};

/// Seeded uniform validation sample; train is the complement. Both keep corpus order.
SplitResult split(const ParallelCorpus& corpus, std::size_t validation_size, std::uint64_t seed);

}  // namespace gbemt
