#include "gbemt/harness.hpp"

#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "gbemt/errors.hpp"
#include "gbemt/rng.hpp"
#include "gbemt/tokenizer.hpp"
#include "gbemt/utf8.hpp"
#include "json_util.hpp"

namespace gbemt {
namespace {

namespace fs = std::filesystem;

void require_file(const std::string& path, const std::string& what) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw IoError(what + " not found: " + path);
}

bool valid_name(const std::string& name) {
  if (name.empty()) return false;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

PairSpec pair_from_json(const nlohmann::json& j) {
  const std::string ctx = "experiment pair";
  detail::check_keys(j, {"name", "src_file", "tgt_file", "tag", "test_src_file", "test_tgt_file", "bpe_extra_file"},
                     ctx);
  PairSpec p;
  detail::read_key(j, "name", p.name, ctx);
  detail::read_key(j, "src_file", p.src_file, ctx);
  detail::read_key(j, "tgt_file", p.tgt_file, ctx);
  detail::read_key(j, "tag", p.tag, ctx);
  detail::read_key(j, "test_src_file", p.test_src_file, ctx);
  detail::read_key(j, "test_tgt_file", p.test_tgt_file, ctx);
  detail::read_key(j, "bpe_extra_file", p.bpe_extra_file, ctx);
  return p;
}

nlohmann::json to_json(const PairSpec& p) {
  nlohmann::json j;
  j["name"] = p.name;
  j["src_file"] = p.src_file;
  j["tgt_file"] = p.tgt_file;
  j["tag"] = p.tag;
  if (!p.test_src_file.empty()) j["test_src_file"] = p.test_src_file;
  if (!p.test_tgt_file.empty()) j["test_tgt_file"] = p.test_tgt_file;
  if (!p.bpe_extra_file.empty()) j["bpe_extra_file"] = p.bpe_extra_file;
  return j;
}

DecodeOptions decode_from_json(const nlohmann::json& j) {
  const std::string ctx = "decode config";
  detail::check_keys(j, {"beam_size", "max_output_len"}, ctx);
  DecodeOptions d;
  detail::read_key(j, "beam_size", d.beam_size, ctx);
  detail::read_key(j, "max_output_len", d.max_output_len, ctx);
  return d;
}

std::string decoding_settings(const ExperimentConfig& c) {
  std::string s = "beam=" + std::to_string(c.decode.beam_size) + " max_len=";
  s += c.decode.max_output_len == 0 ? std::string("1.5x+5") : std::to_string(c.decode.max_output_len);
  return s;
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

std::string one_decimal(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(1);
  out << *v;
  return out.str();
}

nlohmann::ordered_json filter_json(const FilterReport& r) {
  return nlohmann::ordered_json::parse(r.to_json());
}

// Everything one system needs: data, tokenizer settings, and where to write.
struct SystemJob {
  std::string name;
  fs::path dir;
  ParallelCorpus train;
  ParallelCorpus valid;
  ParallelCorpus test;
  std::vector<std::string> labels;  // per test line; empty for bilingual systems
  std::set<std::string> protected_tokens;
  std::vector<std::string> bpe_extra;
  std::size_t tgt_vocab_limit = 0;
};

struct SystemOutcome {
  SystemSummary summary;
  std::vector<std::string> hypotheses;
  std::vector<std::string> references;
};

class Logger {
 public:
  explicit Logger(std::ostream* out) : out_(out) {}
  void line(const std::string& text) {
    if (!out_) return;
    std::lock_guard<std::mutex> lock(mu_);
    *out_ << text << std::endl;
  }

 private:
  std::ostream* out_;
  std::mutex mu_;
};

SystemOutcome run_system(const ExperimentConfig& config, const SystemJob& job, Logger& log) {
  fs::create_directories(job.dir);
  std::vector<std::string> src_lines, tgt_lines;
  for (const auto& p : job.train.pairs) {
    src_lines.push_back(p.source);
    tgt_lines.push_back(p.target);
  }
  tgt_lines.insert(tgt_lines.end(), job.bpe_extra.begin(), job.bpe_extra.end());
  const BpeModel src_bpe = train_bpe(src_lines, config.model.src_vocab, job.protected_tokens);
  const BpeModel tgt_bpe = train_bpe(tgt_lines, job.tgt_vocab_limit, {});
  src_bpe.save(job.dir / "src.bpe");
  tgt_bpe.save(job.dir / "tgt.bpe");

  ModelConfig mc = config.model;
  mc.src_vocab = src_bpe.size();
  mc.tgt_vocab = tgt_bpe.size();
  const auto train_set = tokenize_corpus(job.train, src_bpe, tgt_bpe, mc.max_seq_len);
  const auto valid_set = tokenize_corpus(job.valid, src_bpe, tgt_bpe, mc.max_seq_len);

  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, "train/" + job.name);
  tc.checkpoint_dir = job.dir.string();
  log.line(job.name + ": training on " + std::to_string(train_set.size()) + " pairs (vocab " +
           std::to_string(mc.src_vocab) + "/" + std::to_string(mc.tgt_vocab) + ")");
  const TrainResult result = train(mc, train_set, valid_set, tc, [&](const EpochStats& s) {
    log.line(job.name + "\t" + format_log_line(s));
  });

  SystemOutcome out;
  out.summary.system_name = job.name;
  out.summary.best_epoch = result.best.epoch;
  out.summary.best_validation_loss = result.best.validation_loss;
  out.summary.src_vocab = mc.src_vocab;
  out.summary.tgt_vocab = mc.tgt_vocab;
  // Decode with the stored f32 weights so `gbemt translate` reproduces these hypotheses.
  const Checkpoint stored = load_checkpoint(job.dir / "best.ckpt");
  for (const auto& p : job.test.pairs) {
    out.hypotheses.push_back(translate(stored, src_bpe, tgt_bpe, p.source, std::nullopt, config.decode));
    out.references.push_back(p.target);
  }
  write_text_lines(job.dir / "hyp.txt", out.hypotheses);
  if (!job.labels.empty()) write_text_lines(job.dir / "labels.txt", job.labels);
  log.line(job.name + ": decoded " + std::to_string(out.hypotheses.size()) + " test sentences");
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (pairs.empty()) throw ConfigError("experiment needs at least one pair");
  if (multilingual && pairs.size() < 2) {
    throw ConfigError("a multilingual model needs at least 2 pairs, got " + std::to_string(pairs.size()));
  }
  std::set<std::string> names, tags;
  for (const auto& p : pairs) {
    if (!valid_name(p.name)) throw ConfigError("pair name must be letters, digits, '_' or '-': '" + p.name + "'");
    if (!names.insert(p.name).second) throw ConfigError("duplicate pair name '" + p.name + "'");
    const std::string tag = LanguageTag::parse(p.tag).token();
    if (!tags.insert(tag).second) throw ConfigError("tag collision: " + tag + " is used by more than one pair");
    if (p.test_src_file.empty() != p.test_tgt_file.empty()) {
      throw ConfigError(p.name + ": give both test_src_file and test_tgt_file or neither");
    }
    if (p.test_src_file.empty() && test_size == 0) {
      throw ConfigError(p.name + ": no test files and test_size is 0");
    }
  }
  model.validate();
  train.validate();
  if (decode.beam_size == 0) throw ConfigError("beam_size must be at least 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  for (const auto& p : pairs) {
    require_file(p.src_file, p.name + " source file");
    require_file(p.tgt_file, p.name + " target file");
    if (!p.test_src_file.empty()) {
      require_file(p.test_src_file, p.name + " test source file");
      require_file(p.test_tgt_file, p.name + " test target file");
    }
    if (!p.bpe_extra_file.empty()) require_file(p.bpe_extra_file, p.name + " extra BPE file");
  }
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : c.pairs) j["pairs"].push_back(to_json(p));
  j["source_lang"] = c.source_lang;
  j["model"] = to_json(c.model);
  j["multilingual_tgt_vocab"] = c.multilingual_tgt_vocab;
  j["train"] = to_json(c.train);
  j["decode"] = {{"beam_size", c.decode.beam_size}, {"max_output_len", c.decode.max_output_len}};
  j["validation_size"] = c.validation_size;
  j["test_size"] = c.test_size;
  j["max_train_pairs"] = c.max_train_pairs;
  j["multilingual"] = c.multilingual;
  j["parallel_bilinguals"] = c.parallel_bilinguals;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  const std::string ctx = "experiment config";
  detail::check_keys(j,
                     {"pairs", "source_lang", "model", "multilingual_tgt_vocab", "train", "decode", "validation_size",
                      "test_size", "max_train_pairs", "multilingual", "parallel_bilinguals", "seed", "output_dir"},
                     ctx);
  ExperimentConfig c;
  if (auto it = j.find("pairs"); it != j.end()) {
    if (!it->is_array()) throw ConfigError(ctx + ": 'pairs' must be an array");
    for (const auto& p : *it) c.pairs.push_back(pair_from_json(p));
  }
  detail::read_key(j, "source_lang", c.source_lang, ctx);
  if (auto it = j.find("model"); it != j.end()) c.model = model_config_from_json(*it);
  detail::read_key(j, "multilingual_tgt_vocab", c.multilingual_tgt_vocab, ctx);
  if (auto it = j.find("train"); it != j.end()) c.train = train_config_from_json(*it);
  if (auto it = j.find("decode"); it != j.end()) c.decode = decode_from_json(*it);
  detail::read_key(j, "validation_size", c.validation_size, ctx);
  detail::read_key(j, "test_size", c.test_size, ctx);
  detail::read_key(j, "max_train_pairs", c.max_train_pairs, ctx);
  detail::read_key(j, "multilingual", c.multilingual, ctx);
  detail::read_key(j, "parallel_bilinguals", c.parallel_bilinguals, ctx);
  detail::read_key(j, "seed", c.seed, ctx);
  detail::read_key(j, "output_dir", c.output_dir, ctx);
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

void apply_env_overrides(ExperimentConfig& config) {
  if (const char* seed = std::getenv("GBEMT_SEED"); seed && *seed) {
    try {
      std::size_t used = 0;
      config.seed = std::stoull(seed, &used);
      if (seed[used] != '\0') throw std::invalid_argument(seed);
    } catch (const std::exception&) {
      throw ConfigError(std::string("GBEMT_SEED is not an unsigned integer: ") + seed);
    }
  }
  if (const char* dir = std::getenv("GBEMT_OUTPUT_DIR"); dir && *dir) config.output_dir = dir;
}

std::vector<DatasetSizes> dataset_stats(const std::vector<DatasetSizes>& rows, const std::string& multilingual_name) {
  std::vector<DatasetSizes> out = rows;
  DatasetSizes total{multilingual_name, 0, 0, 0};
  for (const auto& r : rows) {
    total.train += r.train;
    total.validation += r.validation;
    total.test += r.test;
  }
  out.push_back(total);
  return out;
}

std::vector<PreparedPair> prepare_pairs(const ExperimentConfig& config) {
  std::vector<PreparedPair> out;
  for (const auto& spec : config.pairs) {
    const std::string lang = LanguageTag::parse(spec.tag).language();
    ParallelCorpus corpus = load_parallel(spec.src_file, spec.tgt_file, config.source_lang, lang);
    ParallelCorpus test;
    if (!spec.test_src_file.empty()) {
      test = load_parallel(spec.test_src_file, spec.test_tgt_file, config.source_lang, lang);
    } else {
      if (config.test_size > corpus.size()) {
        throw SizeError(spec.name + ": test_size " + std::to_string(config.test_size) + " exceeds corpus size " +
                        std::to_string(corpus.size()));
      }
      auto carved = split(corpus, config.test_size, derive_seed(config.seed, "test/" + spec.name));
      corpus = std::move(carved.train);
      test = std::move(carved.valid);
    }
    test = filter_corpus(test, ParallelCorpus{{}, test.source_lang, test.target_lang}).first;
    auto [filtered, report] = filter_corpus(corpus, test);
    if (config.max_train_pairs > 0) {
      filtered = subsample(filtered, config.max_train_pairs, derive_seed(config.seed, "subsample/" + spec.name));
    }
    if (config.validation_size > filtered.size()) {
      throw SizeError(spec.name + ": validation_size " + std::to_string(config.validation_size) +
                      " exceeds the " + std::to_string(filtered.size()) + " pairs left after filtering");
    }
    auto parts = split(filtered, config.validation_size, derive_seed(config.seed, "valid/" + spec.name));
    PreparedPair p{spec, std::move(parts.train), std::move(parts.valid), std::move(test), report, {}};
    if (!spec.bpe_extra_file.empty()) {
      for (auto& line : read_text_lines(spec.bpe_extra_file)) {
        if (!utf8::trim(line).empty()) p.bpe_extra.push_back(std::move(line));
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

nlohmann::ordered_json ExperimentReport::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["decoding_settings"] = decoding_settings;
  j["dataset_sizes"] = nlohmann::ordered_json::array();
  for (const auto& s : sizes) {
    j["dataset_sizes"].push_back({{"name", s.name}, {"train", s.train}, {"validation", s.validation}, {"test", s.test}});
  }
  j["filter_reports"] = nlohmann::ordered_json::object();
  for (const auto& [name, r] : filters) j["filter_reports"][name] = filter_json(r);
  j["systems"] = nlohmann::ordered_json::array();
  for (const auto& s : systems) {
    j["systems"].push_back({{"system_name", s.system_name},
                            {"best_epoch", s.best_epoch},
                            {"best_validation_loss", s.best_validation_loss},
                            {"src_vocab", s.src_vocab},
                            {"tgt_vocab", s.tgt_vocab}});
  }
  j["results"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    auto row = gbemt::to_json(r);
    row["seed"] = seed;
    j["results"].push_back(std::move(row));
  }
  return j;
}

std::string ExperimentReport::to_markdown() const {
  std::ostringstream out;
  out << "# Experiment report\n\n"
      << "- seed: " << seed << "\n"
      << "- decoding: " << decoding_settings << "\n\n"
      << "## Dataset sizes\n\n"
      << "| Model | Train | Validation | Test |\n"
      << "|---|---:|---:|---:|\n";
  for (const auto& s : sizes) {
    out << "| " << s.name << " | " << s.train << " | " << s.validation << " | " << s.test << " |\n";
  }
  out << "\n## Filtering\n\n"
      << "| Pair | Input | Duplicates | Empty | Leaked | Output |\n"
      << "|---|---:|---:|---:|---:|---:|\n";
  for (const auto& [name, r] : filters) {
    out << "| " << name << " | " << r.input_count << " | " << r.dropped_duplicates << " | " << r.dropped_empty
        << " | " << r.dropped_leaked << " | " << r.output_count << " |\n";
  }
  out << "\n## Results\n\n"
      << "| System | Target | BLEU | chrF | TER | Sentences | Decoding | Seed |\n"
      << "|---|---|---:|---:|---:|---:|---|---:|\n";
  for (const auto& r : rows) {
    out << "| " << r.system_name << " | " << r.target_label << " | " << one_decimal(r.bleu) << " | "
        << one_decimal(r.chrf) << " | " << one_decimal(r.ter) << " | " << r.sentence_count << " | "
        << r.decoding_settings << " | " << seed << " |\n";
  }
  return out.str();
}

ExperimentReport run_experiment(const ExperimentConfig& config, std::ostream* log_stream) {
  config.validate();
  Logger log(log_stream);
  const auto prepared = prepare_pairs(config);
  const fs::path root = config.output_dir;
  fs::create_directories(root);

  ExperimentReport report;
  report.seed = config.seed;
  report.decoding_settings = decoding_settings(config);

  std::vector<DatasetSizes> rows;
  std::vector<std::string> names;
  for (const auto& p : prepared) {
    const std::string system = config.source_lang + "2" + p.spec.name;
    rows.push_back({system, p.train.size(), p.valid.size(), p.test.size()});
    report.filters.emplace_back(p.spec.name, p.filter);
    names.push_back(p.spec.name);
  }
  const std::string multi_name = config.source_lang + "2" + join(names, "+");
  report.sizes = config.multilingual ? dataset_stats(rows, multi_name) : rows;

  std::vector<SystemJob> bilingual;
  for (const auto& p : prepared) {
    SystemJob job;
    job.name = config.source_lang + "2" + p.spec.name;
    job.dir = root / job.name;
    job.train = p.train;
    job.valid = p.valid;
    job.test = p.test;
    job.bpe_extra = p.bpe_extra;
    job.tgt_vocab_limit = config.model.tgt_vocab;
    bilingual.push_back(std::move(job));
  }

  std::vector<SystemOutcome> outcomes(bilingual.size());
  if (config.parallel_bilinguals && bilingual.size() > 1) {
    std::vector<std::exception_ptr> errors(bilingual.size());
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < bilingual.size(); ++i) {
      threads.emplace_back([&, i] {
        try {
          outcomes[i] = run_system(config, bilingual[i], log);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (std::size_t i = 0; i < bilingual.size(); ++i) outcomes[i] = run_system(config, bilingual[i], log);
  }

  const MetricSelection all;
  for (std::size_t i = 0; i < bilingual.size(); ++i) {
    auto reps = evaluate(outcomes[i].hypotheses, outcomes[i].references, nullptr, all, bilingual[i].name,
                         report.decoding_settings);
    reps.front().target_label = prepared[i].spec.name;
    report.rows.push_back(reps.front());
    report.systems.push_back(outcomes[i].summary);
  }

  if (config.multilingual) {
    std::vector<std::pair<ParallelCorpus, LanguageTag>> train_parts, valid_parts, test_parts;
    SystemJob job;
    job.name = multi_name;
    job.dir = root / multi_name;
    for (const auto& p : prepared) {
      const LanguageTag tag = LanguageTag::parse(p.spec.tag);
      train_parts.emplace_back(p.train, tag);
      valid_parts.emplace_back(p.valid, tag);
      test_parts.emplace_back(p.test, tag);
      job.protected_tokens.insert(tag.token());
      job.labels.insert(job.labels.end(), p.test.size(), p.spec.name);
      job.bpe_extra.insert(job.bpe_extra.end(), p.bpe_extra.begin(), p.bpe_extra.end());
    }
    job.train = tag_and_merge(train_parts);
    job.valid = tag_and_merge(valid_parts);
    job.test = tag_and_merge(test_parts);
    job.tgt_vocab_limit = config.multilingual_tgt_vocab ? config.multilingual_tgt_vocab : config.model.tgt_vocab;
    const SystemOutcome outcome = run_system(config, job, log);
    auto reps = evaluate(outcome.hypotheses, outcome.references, &job.labels, all, job.name,
                         report.decoding_settings);
    report.rows.insert(report.rows.end(), reps.begin(), reps.end());
    report.systems.push_back(outcome.summary);
  }

  {
    std::ofstream md(root / "report.md", std::ios::binary);
    md << report.to_markdown();
    std::ofstream js(root / "report.json", std::ios::binary);
    js << report.to_json().dump(2) << '\n';
    if (!md || !js) throw IoError("cannot write report files in " + root.string());
  }
  return report;
}

}  // namespace gbemt
