// gbemt: command-line front end. One subcommand per job; exit codes
// 0 ok, 1 usage, 2 data, 3 training.

#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gbemt/corpus.hpp"
#include "gbemt/decoding.hpp"
#include "gbemt/errors.hpp"
#include "gbemt/harness.hpp"
#include "gbemt/metrics.hpp"
#include "gbemt/model.hpp"
#include "gbemt/rng.hpp"
#include "gbemt/tokenizer.hpp"
#include "gbemt/training.hpp"

namespace {

using namespace gbemt;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
}

struct PrepareArgs {
  std::string src, tgt, src_lang = "en", tgt_lang, test_src, test_tgt, tag, out;
  std::size_t subsample = 0, validation_size = 0;
  std::uint64_t seed = 42;
  bool json = false;
};

int run_prepare(const PrepareArgs& a) {
  ParallelCorpus corpus = load_parallel(a.src, a.tgt, a.src_lang, a.tgt_lang);
  ParallelCorpus test{{}, a.src_lang, a.tgt_lang};
  if (!a.test_src.empty()) test = load_parallel(a.test_src, a.test_tgt, a.src_lang, a.tgt_lang);
  auto [filtered, report] = filter_corpus(corpus, test);
  if (a.subsample > 0) filtered = subsample(filtered, a.subsample, derive_seed(a.seed, "subsample"));
  auto parts = split(filtered, a.validation_size, derive_seed(a.seed, "valid"));
  if (!a.tag.empty()) {
    const LanguageTag tag = LanguageTag::parse(a.tag);
    parts.train = tag_and_merge({std::make_pair(parts.train, tag)});
    parts.valid = tag_and_merge({std::make_pair(parts.valid, tag)});
  }
  if (const auto parent = std::filesystem::path(a.out).parent_path(); !parent.empty()) {
    std::filesystem::create_directories(parent);
  }
  save_parallel(parts.train, a.out + ".train.src", a.out + ".train.tgt");
  if (a.validation_size > 0) save_parallel(parts.valid, a.out + ".valid.src", a.out + ".valid.tgt");
  std::cout << (a.json ? report.to_json() + "\n" : report.to_text());
  return 0;
}

struct BpeArgs {
  std::vector<std::string> inputs;
  std::vector<std::string> protect;
  std::size_t vocab_size = 0;
  std::string output, model, encode;
};

int run_bpe(const BpeArgs& a) {
  if (!a.encode.empty()) {
    if (a.model.empty()) throw ConfigError("--encode needs --model");
    const BpeModel bpe = BpeModel::load(a.model);
    for (const auto& line : read_text_lines(a.encode)) {
      std::string out;
      for (int id : bpe.encode(line)) out += (out.empty() ? "" : " ") + bpe.token(id);
      std::cout << out << '\n';
    }
    return 0;
  }
  if (a.inputs.empty() || a.output.empty() || a.vocab_size == 0) {
    throw ConfigError("training a BPE model needs --input, --vocab-size and --output");
  }
  std::vector<std::string> lines;
  for (const auto& path : a.inputs) {
    for (auto& line : read_text_lines(path)) lines.push_back(std::move(line));
  }
  const BpeModel bpe = train_bpe(lines, a.vocab_size, std::set<std::string>(a.protect.begin(), a.protect.end()));
  bpe.save(a.output);
  std::cout << "merges: " << bpe.merges().size() << "\nvocab: " << bpe.size() << '\n';
  return 0;
}

struct TrainArgs {
  std::string train_src, train_tgt, valid_src, valid_tgt, src_bpe, tgt_bpe, model_config, train_config, output_dir;
};

int run_train(const TrainArgs& a) {
  const BpeModel src_bpe = BpeModel::load(a.src_bpe);
  const BpeModel tgt_bpe = BpeModel::load(a.tgt_bpe);
  ModelConfig mc;
  if (!a.model_config.empty()) mc = model_config_from_json(read_json_file(a.model_config));
  mc.src_vocab = src_bpe.size();
  mc.tgt_vocab = tgt_bpe.size();
  TrainConfig tc;
  if (!a.train_config.empty()) tc = train_config_from_json(read_json_file(a.train_config));
  tc.checkpoint_dir = a.output_dir;
  std::filesystem::create_directories(a.output_dir);
  const auto train_set = tokenize_corpus(load_parallel(a.train_src, a.train_tgt, "src", "tgt"), src_bpe, tgt_bpe,
                                         mc.max_seq_len);
  const auto valid_set = tokenize_corpus(load_parallel(a.valid_src, a.valid_tgt, "src", "tgt"), src_bpe, tgt_bpe,
                                         mc.max_seq_len);
  const TrainResult result =
      train(mc, train_set, valid_set, tc, [](const EpochStats& s) { std::cerr << format_log_line(s) << '\n'; });
  std::cout << "best epoch " << result.best.epoch << ", validation loss " << result.best.validation_loss << '\n';
  return 0;
}

struct TranslateArgs {
  std::string checkpoint, src_bpe, tgt_bpe, input, tag;
  std::size_t beam = 5, max_len = 0;
};

int run_translate(const TranslateArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const BpeModel src_bpe = BpeModel::load(a.src_bpe);
  const BpeModel tgt_bpe = BpeModel::load(a.tgt_bpe);
  check_vocab_match(ckpt.config, src_bpe, tgt_bpe);
  const DecodeOptions options{a.beam, a.max_len};
  const std::optional<std::string> tag = a.tag.empty() ? std::nullopt : std::optional<std::string>(a.tag);
  auto emit = [&](const std::string& line) {
    std::cout << translate(ckpt, src_bpe, tgt_bpe, line, tag, options) << '\n' << std::flush;
  };
  if (a.input.empty() || a.input == "-") {
    std::string line;
    while (std::getline(std::cin, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      emit(line);
    }
  } else {
    for (const auto& line : read_text_lines(a.input)) emit(line);
  }
  return 0;
}

struct EvaluateArgs {
  std::string hyp, ref, labels, metrics = "bleu,chrf,ter", system = "system";
  bool json = false;
};

int run_evaluate(const EvaluateArgs& a) {
  std::optional<std::filesystem::path> labels;
  if (!a.labels.empty()) labels = a.labels;
  const auto reports = evaluate_corpus(a.hyp, a.ref, labels, parse_metric_list(a.metrics), a.system);
  if (a.json) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : reports) j.push_back(to_json(r));
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << format_report_table(reports);
  }
  return 0;
}

struct ExperimentArgs {
  std::string config, output_dir;
  std::optional<std::uint64_t> seed;
  bool parallel = false;
  bool json = false;
};

ExperimentConfig experiment_config(const ExperimentArgs& a) {
  ExperimentConfig c = load_experiment_config(a.config);
  apply_env_overrides(c);
  if (a.seed) c.seed = *a.seed;
  if (!a.output_dir.empty()) c.output_dir = a.output_dir;
  if (a.parallel) c.parallel_bilinguals = true;
  return c;
}

int run_experiment_cmd(const ExperimentArgs& a) {
  const ExperimentConfig c = experiment_config(a);
  const ExperimentReport report = run_experiment(c, &std::cerr);
  std::cout << report.to_markdown();
  return 0;
}

int run_stats(const ExperimentArgs& a) {
  const ExperimentConfig c = experiment_config(a);
  c.validate();
  std::vector<DatasetSizes> rows;
  std::string names;
  for (const auto& p : prepare_pairs(c)) {
    rows.push_back({c.source_lang + "2" + p.spec.name, p.train.size(), p.valid.size(), p.test.size()});
    names += (names.empty() ? "" : "+") + p.spec.name;
  }
  const auto table = dataset_stats(rows, c.source_lang + "2" + names);
  if (a.json) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& s : table) {
      j.push_back({{"name", s.name}, {"train", s.train}, {"validation", s.validation}, {"test", s.test}});
    }
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "model\ttrain\tvalidation\ttest\n";
    for (const auto& s : table) {
      std::cout << s.name << '\t' << s.train << '\t' << s.validation << '\t' << s.test << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilingual Transformer NMT toolkit"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "Filter, subsample, split and optionally tag a parallel corpus");
  prepare->add_option("--src", prep.src, "Source text file")->required();
  prepare->add_option("--tgt", prep.tgt, "Target text file")->required();
  prepare->add_option("--src-lang", prep.src_lang, "Source language code");
  prepare->add_option("--tgt-lang", prep.tgt_lang, "Target language code")->required();
  prepare->add_option("--test-src", prep.test_src, "Test source file (pairs to keep out of training)");
  prepare->add_option("--test-tgt", prep.test_tgt, "Test target file");
  prepare->add_option("--subsample", prep.subsample, "Keep at most N pairs (0 keeps all)");
  prepare->add_option("--validation-size", prep.validation_size, "Pairs moved to the validation split");
  prepare->add_option("--tag", prep.tag, "Prefix every source with this language tag, e.g. <2ewe>");
  prepare->add_option("--seed", prep.seed, "Random seed");
  prepare->add_option("--out", prep.out, "Output prefix for .train/.valid files")->required();
  prepare->add_flag("--json", prep.json, "Print the filter report as JSON");

  BpeArgs bpe_args;
  auto* bpe = app.add_subcommand("bpe", "Train a BPE model, or apply one with --encode");
  bpe->add_option("--input", bpe_args.inputs, "Training text files");
  bpe->add_option("--vocab-size", bpe_args.vocab_size, "Vocabulary size including special tokens");
  bpe->add_option("--protect", bpe_args.protect, "Tokens kept atomic (language tags)");
  bpe->add_option("--output", bpe_args.output, "Model file to write");
  bpe->add_option("--model", bpe_args.model, "Existing model file (with --encode)");
  bpe->add_option("--encode", bpe_args.encode, "Print the subword tokens of each line of this file");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a Transformer; writes best.ckpt and train.log");
  train_cmd->add_option("--train-src", tr.train_src)->required();
  train_cmd->add_option("--train-tgt", tr.train_tgt)->required();
  train_cmd->add_option("--valid-src", tr.valid_src)->required();
  train_cmd->add_option("--valid-tgt", tr.valid_tgt)->required();
  train_cmd->add_option("--src-bpe", tr.src_bpe)->required();
  train_cmd->add_option("--tgt-bpe", tr.tgt_bpe)->required();
  train_cmd->add_option("--model-config", tr.model_config, "ModelConfig JSON (vocab sizes come from the tokenizers)");
  train_cmd->add_option("--train-config", tr.train_config, "TrainConfig JSON");
  train_cmd->add_option("--output-dir", tr.output_dir)->required();

  TranslateArgs tl;
  auto* translate_cmd = app.add_subcommand("translate", "Translate one sentence per line");
  translate_cmd->add_option("--checkpoint", tl.checkpoint)->required();
  translate_cmd->add_option("--src-bpe", tl.src_bpe)->required();
  translate_cmd->add_option("--tgt-bpe", tl.tgt_bpe)->required();
  translate_cmd->add_option("--input", tl.input, "Input file; standard input when absent or '-'");
  translate_cmd->add_option("--tag", tl.tag, "Target language tag for multilingual models");
  translate_cmd->add_option("--beam", tl.beam, "Beam size (1 = greedy)");
  translate_cmd->add_option("--max-len", tl.max_len, "Maximum output tokens (0 = 1.5 x source + 5)");

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score hypotheses with BLEU, chrF and TER");
  evaluate_cmd->add_option("--hyp", ev.hyp)->required();
  evaluate_cmd->add_option("--ref", ev.ref)->required();
  evaluate_cmd->add_option("--labels", ev.labels, "Per-line language labels");
  evaluate_cmd->add_option("--metrics", ev.metrics, "Comma-separated subset of bleu,chrf,ter");
  evaluate_cmd->add_option("--system", ev.system, "System name in the report");
  evaluate_cmd->add_flag("--json", ev.json);

  ExperimentArgs ex;
  auto* experiment = app.add_subcommand("experiment", "Bilingual vs multilingual comparison");
  auto* stats = app.add_subcommand("stats", "Dataset size table for an experiment config");
  for (auto* cmd : {experiment, stats}) {
    cmd->add_option("--config", ex.config, "ExperimentConfig JSON")->required();
    cmd->add_option("--output-dir", ex.output_dir);
    cmd->add_option("--seed", ex.seed);
  }
  experiment->add_flag("--parallel-bilinguals", ex.parallel, "Train bilingual models concurrently");
  stats->add_flag("--json", ex.json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*prepare) return run_prepare(prep);
    if (*bpe) return run_bpe(bpe_args);
    if (*train_cmd) return run_train(tr);
    if (*translate_cmd) return run_translate(tl);
    if (*evaluate_cmd) return run_evaluate(ev);
    if (*experiment) return run_experiment_cmd(ex);
    if (*stats) return run_stats(ex);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
