#include "gbemt/corpus.hpp"

#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gbemt/errors.hpp"
#include "gbemt/rng.hpp"
#include "gbemt/utf8.hpp"

namespace gbemt {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}


using PairKey = std::pair<std::string, std::string>;

PairKey key_of(const SentencePair& p) {
  return {utf8::normalize_whitespace(p.source), utf8::normalize_whitespace(p.target)};
}

bool valid_language_code(const std::string& code) {
  if (code.empty()) return false;
  for (char c : code) {
    if (c < 'a' || c > 'z') return false;
  }
  return true;
}

}  // namespace

std::vector<std::string> read_text_lines(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  if (const auto bad = utf8::find_invalid(content)) {
    throw DecodeError(path.string() + ": invalid UTF-8 at byte offset " + std::to_string(*bad));
  }
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string::npos) end = content.size();
    std::string line = content.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

void write_text_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& line : lines) out << line << '\n';
}

std::string FilterReport::to_text() const {
  std::ostringstream out;
  out << "input_count: " << input_count << '\n'
      << "dropped_duplicates: " << dropped_duplicates << '\n'
      << "dropped_empty: " << dropped_empty << '\n'
      << "dropped_leaked: " << dropped_leaked << '\n'
      << "output_count: " << output_count << '\n';
  return out.str();
}

std::string FilterReport::to_json() const {
  nlohmann::ordered_json j;
  j["input_count"] = input_count;
  j["dropped_duplicates"] = dropped_duplicates;
  j["dropped_empty"] = dropped_empty;
  j["dropped_leaked"] = dropped_leaked;
  j["output_count"] = output_count;
  return j.dump();
}

LanguageTag LanguageTag::for_language(const std::string& code) {
  if (!valid_language_code(code)) {
    throw ConfigError("language code must be lowercase ASCII letters: '" + code + "'");
  }
  return LanguageTag("<2" + code + ">");
}

LanguageTag LanguageTag::parse(const std::string& token) {
  if (token.size() < 4 || token.rfind("<2", 0) != 0 || token.back() != '>') {
    throw ConfigError("malformed language tag '" + token + "', expected <2xxx>");
  }
  return for_language(token.substr(2, token.size() - 3));
}

ParallelCorpus load_parallel(const std::filesystem::path& source_path,
                             const std::filesystem::path& target_path,
                             const std::string& source_lang,
                             const std::string& target_lang) {
  auto src = read_text_lines(source_path);
  auto tgt = read_text_lines(target_path);
  if (src.size() != tgt.size()) {
    throw AlignmentError("line count mismatch: " + source_path.string() + " has " +
                         std::to_string(src.size()) + " lines, " + target_path.string() +
                         " has " + std::to_string(tgt.size()));
  }
  ParallelCorpus corpus{{}, source_lang, target_lang};
  corpus.pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    corpus.pairs.push_back({std::move(src[i]), std::move(tgt[i]), i + 1});
  }
  return corpus;
}

void save_parallel(const ParallelCorpus& corpus,
                   const std::filesystem::path& source_path,
                   const std::filesystem::path& target_path) {
  std::ofstream src(source_path, std::ios::binary);
  std::ofstream tgt(target_path, std::ios::binary);
  if (!src || !tgt) throw IoError("cannot write " + source_path.string() + " / " + target_path.string());
  for (const auto& p : corpus.pairs) {
    src << p.source << '\n';
    tgt << p.target << '\n';
  }
}

std::pair<ParallelCorpus, FilterReport> filter_corpus(const ParallelCorpus& corpus,
                                                      const ParallelCorpus& test_corpus) {
  std::set<PairKey> test_keys;
  for (const auto& p : test_corpus.pairs) test_keys.insert(key_of(p));

  FilterReport report;
  report.input_count = corpus.size();
  ParallelCorpus out{{}, corpus.source_lang, corpus.target_lang};
  std::set<PairKey> seen;
  for (const auto& p : corpus.pairs) {
    SentencePair trimmed{utf8::trim(p.source), utf8::trim(p.target), p.origin_line};
    if (trimmed.source.empty() || trimmed.target.empty()) {
      ++report.dropped_empty;
      continue;
    }
    PairKey key = key_of(trimmed);
    if (!seen.insert(key).second) {
      ++report.dropped_duplicates;
      continue;
    }
    if (test_keys.count(key) != 0) {
      ++report.dropped_leaked;
      continue;
    }
    out.pairs.push_back(std::move(trimmed));
  }
  report.output_count = out.size();
  return {std::move(out), report};
}

ParallelCorpus subsample(const ParallelCorpus& corpus, std::size_t n, std::uint64_t seed) {
  if (n >= corpus.size()) return corpus;
  SplitMix64 rng(seed);
  ParallelCorpus out{{}, corpus.source_lang, corpus.target_lang};
  out.pairs.reserve(n);
  for (std::size_t i : sample_indices(corpus.size(), n, rng)) out.pairs.push_back(corpus.pairs[i]);
  return out;
}

ParallelCorpus tag_and_merge(const std::vector<std::pair<ParallelCorpus, LanguageTag>>& corpora) {
  ParallelCorpus out;
  if (corpora.empty()) return out;
  std::set<std::string> tags;
  out.source_lang = corpora.front().first.source_lang;
  for (const auto& [corpus, tag] : corpora) {
    if (!tags.insert(tag.token()).second) {
      throw ConfigError("duplicate language tag " + tag.token());
    }
    if (corpus.source_lang != out.source_lang) {
      throw ConfigError("tag_and_merge: source languages differ ('" + out.source_lang + "' vs '" +
                        corpus.source_lang + "')");
    }
  }
  for (const auto& [corpus, tag] : corpora) {
    if (!out.target_lang.empty()) out.target_lang += '+';
    out.target_lang += corpus.target_lang;
    for (const auto& p : corpus.pairs) {
      out.pairs.push_back({tag.token() + " " + p.source, p.target, p.origin_line});
    }
  }
  return out;
}

SplitResult split(const ParallelCorpus& corpus, std::size_t validation_size, std::uint64_t seed) {
  if (validation_size > corpus.size()) {
    throw SizeError("validation size " + std::to_string(validation_size) + " exceeds corpus size " +
                    std::to_string(corpus.size()));
  }
  SplitMix64 rng(seed);
  const auto picked = sample_indices(corpus.size(), validation_size, rng);
  SplitResult result{{{}, corpus.source_lang, corpus.target_lang},
                     {{}, corpus.source_lang, corpus.target_lang}};
  std::size_t next = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (next < picked.size() && picked[next] == i) {
      result.valid.pairs.push_back(corpus.pairs[i]);
      ++next;
    } else {
      result.train.pairs.push_back(corpus.pairs[i]);
    }
  }
  return result;
}

}  // namespace gbemt
