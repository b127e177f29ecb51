#include "gbemt/tokenizer.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "gbemt/errors.hpp"
#include "gbemt/utf8.hpp"

namespace gbemt {
namespace {

const std::vector<std::string> kSpecialTexts = {"<pad>", "<unk>", "<s>", "</s>"};

struct Symbol {
  std::string text;
  bool final = false;

  std::string vocab_text() const { return final ? text + std::string(kWordEnd) : text; }
};

using Word = std::vector<Symbol>;

Word split_word(const std::string& word) {
  Word out;
  for (auto& c : utf8::characters(word)) out.push_back({std::move(c), false});
  if (!out.empty()) out.back().final = true;
  return out;
}

// Applies one merge to every left-to-right, non-overlapping occurrence.
bool apply_merge(Word& word, const std::string& left, const std::string& right) {
  bool changed = false;
  Word out;
  out.reserve(word.size());
  std::size_t i = 0;
  while (i < word.size()) {
    if (i + 1 < word.size() && !word[i].final && word[i].text == left && word[i + 1].text == right) {
      out.push_back({left + right, word[i + 1].final});
      i += 2;
      changed = true;
    } else {
      out.push_back(std::move(word[i]));
      ++i;
    }
  }
  word = std::move(out);
  return changed;
}

bool single_code_point(std::string_view token) {
  if (token.size() > kWordEnd.size() && token.substr(token.size() - kWordEnd.size()) == kWordEnd) {
    token.remove_suffix(kWordEnd.size());
  }
  return !token.empty() && utf8::characters(token).size() == 1;
}

void check_protected(const std::set<std::string>& protected_tokens) {
  for (const auto& t : protected_tokens) {
    if (t.empty() || utf8::split_whitespace(t) != std::vector<std::string>{t}) {
      throw ConfigError("protected token '" + t + "' must be a single non-empty word");
    }
    if (single_code_point(t)) {
      throw ConfigError("protected token '" + t + "' must be longer than one character");
    }
  }
}

struct TrainingWords {
  std::map<std::string, std::size_t> frequency;
  std::set<std::string> alphabet;
};

TrainingWords collect_words(const std::vector<std::string>& lines,
                            const std::set<std::string>& protected_tokens) {
  TrainingWords words;
  for (const auto& line : lines) {
    for (auto& w : utf8::split_whitespace(line)) {
      if (protected_tokens.count(w) != 0) continue;
      ++words.frequency[std::move(w)];
    }
  }
  for (const auto& [w, _] : words.frequency) {
    for (const auto& s : split_word(w)) words.alphabet.insert(s.vocab_text());
  }
  return words;
}

}  // namespace

void BpeModel::add_token(const std::string& text) {
  if (ids_.count(text) != 0) return;
  ids_.emplace(text, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(text);
}

void BpeModel::index_merges() {
  merge_rank_.clear();
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    merge_rank_.emplace(std::make_pair(merges_[r].left, merges_[r].right), r);
  }
}

std::optional<TokenId> BpeModel::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

bool BpeModel::is_protected(const std::string& word) const {
  for (const auto& p : protected_) {
    if (p == word) return true;
  }
  return false;
}

std::vector<TokenId> BpeModel::encode_word(const std::string& word) const {
  if (is_protected(word)) return {*id_of(word)};
  Word symbols = split_word(word);
  // Replays the merge table in training order, skipping merges with no occurrence.
  std::size_t applied = 0;
  bool first = true;
  for (;;) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find({symbols[i].text, symbols[i + 1].text});
      if (it == merge_rank_.end()) continue;
      if (!first && it->second <= applied) continue;
      if (!best || it->second < *best) best = it->second;
    }
    if (!best) break;
    apply_merge(symbols, merges_[*best].left, merges_[*best].right);
    applied = *best;
    first = false;
  }
  std::vector<TokenId> ids;
  ids.reserve(symbols.size());
  for (const auto& s : symbols) ids.push_back(id_of(s.vocab_text()).value_or(kUnkId));
  return ids;
}

std::vector<TokenId> BpeModel::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  std::map<std::string, std::vector<TokenId>> memo;
  for (const auto& w : utf8::split_whitespace(text)) {
    auto it = memo.find(w);
    if (it == memo.end()) it = memo.emplace(w, encode_word(w)).first;
    ids.insert(ids.end(), it->second.begin(), it->second.end());
  }
  return ids;
}

std::string BpeModel::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw RangeError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(tokens_.size()));
    }
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    if (id == kUnkId) {
      out.append(kUnkText);
      out.push_back(' ');
      continue;
    }
    const std::string& tok = tokens_[static_cast<std::size_t>(id)];
    if (is_protected(tok)) {
      out += tok;
      out.push_back(' ');
    } else if (tok.size() >= kWordEnd.size() &&
               std::string_view(tok).substr(tok.size() - kWordEnd.size()) == kWordEnd) {
      out.append(tok, 0, tok.size() - kWordEnd.size());
      out.push_back(' ');
    } else {
      out += tok;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::string BpeModel::serialize() const {
  std::ostringstream out;
  out << "#bpe-v1 vocab_size=" << vocab_size_limit_ << '\n';
  for (const auto& m : merges_) out << m.left << ' ' << m.right << '\n';
  out << "#vocab\n";
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
  return out.str();
}

BpeModel BpeModel::parse(std::string_view text) {
  BpeModel model;
  std::istringstream in{std::string(text)};
  std::string line;
  const std::string header = "#bpe-v1 vocab_size=";
  if (!std::getline(in, line) || line.rfind(header, 0) != 0) {
    throw FormatError("BPE model: missing '#bpe-v1' header");
  }
  try {
    model.vocab_size_limit_ = std::stoull(line.substr(header.size()));
  } catch (const std::exception&) {
    throw FormatError("BPE model: bad vocab_size in header '" + line + "'");
  }
  bool in_vocab = false;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!in_vocab) {
      if (line == "#vocab") {
        in_vocab = true;
        continue;
      }
      const auto sp = line.find(' ');
      if (sp == std::string::npos || sp == 0 || sp + 1 == line.size()) {
        throw FormatError("BPE model line " + std::to_string(line_no) + ": malformed merge");
      }
      model.merges_.push_back({line.substr(0, sp), line.substr(sp + 1)});
      continue;
    }
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw FormatError("BPE model line " + std::to_string(line_no) + ": malformed vocab entry");
    }
    const std::string tok = line.substr(0, tab);
    const auto id = std::stoull(line.substr(tab + 1));
    if (id != model.tokens_.size()) {
      throw FormatError("BPE model line " + std::to_string(line_no) + ": ids must be consecutive");
    }
    model.ids_.emplace(tok, static_cast<TokenId>(model.tokens_.size()));
    model.tokens_.push_back(tok);
  }
  if (!in_vocab || model.tokens_.size() < kNumSpecials) {
    throw FormatError("BPE model: missing vocabulary section");
  }
  for (std::size_t i = 0; i < kNumSpecials; ++i) {
    if (model.tokens_[i] != kSpecialTexts[i]) throw FormatError("BPE model: bad special token ids");
  }
  // Protected tokens sit right after the specials, ahead of the single-character alphabet.
  for (std::size_t i = kNumSpecials; i < model.tokens_.size(); ++i) {
    if (single_code_point(model.tokens_[i])) break;
    model.protected_.push_back(model.tokens_[i]);
  }
  model.index_merges();
  return model;
}

void BpeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << serialize();
}

BpeModel BpeModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

std::size_t minimum_vocab_size(const std::vector<std::string>& lines,
                               const std::set<std::string>& protected_tokens) {
  return kNumSpecials + protected_tokens.size() + collect_words(lines, protected_tokens).alphabet.size();
}

BpeModel train_bpe(const std::vector<std::string>& lines,
                   std::size_t vocab_size,
                   const std::set<std::string>& protected_tokens) {
  check_protected(protected_tokens);
  TrainingWords data = collect_words(lines, protected_tokens);
  const std::size_t minimum = kNumSpecials + protected_tokens.size() + data.alphabet.size();
  if (vocab_size < minimum) {
    throw ConfigError("vocab_size " + std::to_string(vocab_size) +
                      " is too small; minimum feasible size is " + std::to_string(minimum));
  }

  BpeModel model;
  model.vocab_size_limit_ = vocab_size;
  for (const auto& s : kSpecialTexts) model.add_token(s);
  for (const auto& p : protected_tokens) {
    model.add_token(p);
    model.protected_.push_back(p);
  }
  for (const auto& a : data.alphabet) model.add_token(a);

  std::vector<std::pair<Word, std::size_t>> words;
  words.reserve(data.frequency.size());
  for (const auto& [w, f] : data.frequency) words.emplace_back(split_word(w), f);

  for (;;) {
    std::map<std::pair<std::string, std::string>, std::size_t> counts;
    for (const auto& [word, freq] : words) {
      for (std::size_t i = 0; i + 1 < word.size(); ++i) counts[{word[i].text, word[i + 1].text}] += freq;
    }
    // std::map iterates in lexicographic order, so the first maximum wins ties.
    const std::pair<std::string, std::string>* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [pair, count] : counts) {
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr || best_count < 2) break;

    const std::string merged = best->first + best->second;
    bool makes_plain = false;
    bool makes_final = false;
    for (const auto& [word, _] : words) {
      for (std::size_t i = 0; i + 1 < word.size(); ++i) {
        if (word[i].text == best->first && word[i + 1].text == best->second) {
          (word[i + 1].final ? makes_final : makes_plain) = true;
        }
      }
    }
    std::vector<std::string> fresh;
    if (makes_plain && !model.id_of(merged)) fresh.push_back(merged);
    if (makes_final && !model.id_of(merged + std::string(kWordEnd))) fresh.push_back(merged + std::string(kWordEnd));
    if (model.size() + fresh.size() > vocab_size) break;

    const BpeMerge merge{best->first, best->second};
    for (auto& [word, _] : words) apply_merge(word, merge.left, merge.right);
    model.merges_.push_back(merge);
    for (const auto& t : fresh) model.add_token(t);
  }
  model.index_merges();
  return model;
}

}  // namespace gbemt
