#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace gbemt {

using TokenId = int;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBosId = 2;
inline constexpr TokenId kEosId = 3;
inline constexpr std::size_t kNumSpecials = 4;

/// Suffix marking a word-final symbol in vocabulary entries, e.g. `ab</w>`.
inline constexpr std::string_view kWordEnd = "</w>";
/// Rendering of UNK in decoded text.
inline constexpr std::string_view kUnkText = "<unk>";

struct BpeMerge {
  std::string left;
  std::string right;
  bool operator==(const BpeMerge&) const = default;
};

/// Trained byte-pair encoding model. Immutable once built.
///
/// Words are split into code points; the last one carries a word-end flag
/// (vocabulary text `c</w>`). Merges are keyed by the flag-free text of the
/// two symbols and the merged symbol inherits the right symbol's flag.
class BpeModel {
 public:
  BpeModel() = default;

  std::vector<TokenId> encode(std::string_view text) const;

  /// Throws RangeError for ids outside the vocabulary.
  std::string decode(std::span<const TokenId> ids) const;

  const std::vector<BpeMerge>& merges() const { return merges_; }
  std::size_t vocab_size_limit() const { return vocab_size_limit_; }
  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<TokenId> id_of(const std::string& token) const;
  const std::vector<std::string>& protected_tokens() const { return protected_; }
  bool is_protected(const std::string& word) const;

  /// Text model file; byte-identical for identical training inputs.
  std::string serialize() const;
  static BpeModel parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static BpeModel load(const std::filesystem::path& path);

  bool operator==(const BpeModel& other) const {
    return merges_ == other.merges_ && tokens_ == other.tokens_ &&
           vocab_size_limit_ == other.vocab_size_limit_;
  }

 private:
  friend BpeModel train_bpe(const std::vector<std::string>&, std::size_t, const std::set<std::string>&);

  void add_token(const std::string& text);
  void index_merges();
  std::vector<TokenId> encode_word(const std::string& word) const;

  std::size_t vocab_size_limit_ = 0;
  std::vector<BpeMerge> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> merge_rank_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::vector<std::string> protected_;
};

/// Smallest vocab_size accepted by train_bpe for these inputs.
std::size_t minimum_vocab_size(const std::vector<std::string>& lines,
                               const std::set<std::string>& protected_tokens);

/// Learns merges until the vocabulary holds vocab_size entries or no pair occurs
/// at least twice. Ties on frequency go to the lexicographically smallest pair.
/// Protected tokens must be whitespace-free and longer than one character.
BpeModel train_bpe(const std::vector<std::string>& lines,
                   std::size_t vocab_size,
                   const std::set<std::string>& protected_tokens = {});

}  // namespace gbemt
