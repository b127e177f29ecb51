#include "gbemt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "gbemt/corpus.hpp"
#include "gbemt/errors.hpp"
#include "gbemt/utf8.hpp"

namespace gbemt {
namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::string join(const std::vector<std::string>& words, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

void check_sizes(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  if (hyps.size() != refs.size()) {
    throw PairingError("hypothesis has " + std::to_string(hyps.size()) + " lines but reference has " +
                       std::to_string(refs.size()));
  }
}

std::vector<std::string> tokens_13a(const std::string& line) { return utf8::split_whitespace(tokenize_13a(line)); }

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& items, std::size_t n) {
  NgramCounts counts;
  if (items.size() < n) return counts;
  for (std::size_t i = 0; i + n <= items.size(); ++i) {
    ++counts[std::vector<std::string>(items.begin() + static_cast<std::ptrdiff_t>(i),
                                      items.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

std::size_t clipped_matches(const NgramCounts& hyp, const NgramCounts& ref) {
  std::size_t m = 0;
  for (const auto& [gram, c] : hyp) {
    auto it = ref.find(gram);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

std::string format_score(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream out;
  out << std::fixed << std::setprecision(1) << *v;
  return out.str();
}

}  // namespace

std::string tokenize_13a(std::string_view input) {
  static const std::regex punct(R"(([\x7B-\x7E\x5B-\x60\x20-\x26\x28-\x2B\x3A-\x40\x2F]))");
  static const std::regex period_comma_1(R"(([^0-9])([\.,]))");
  static const std::regex period_comma_2(R"(([\.,])([^0-9]))");
  static const std::regex dash(R"(([0-9])(-))");

  std::string line(input);
  replace_all(line, "<skipped>", "");
  replace_all(line, "-\n", "");
  replace_all(line, "\n", " ");
  if (line.find('&') != std::string::npos) {
    replace_all(line, "&quot;", "\"");
    replace_all(line, "&amp;", "&");
    replace_all(line, "&lt;", "<");
    replace_all(line, "&gt;", ">");
  }
  line = " " + line + " ";
  line = std::regex_replace(line, punct, " $1 ");
  line = std::regex_replace(line, period_comma_1, "$1 $2 ");
  line = std::regex_replace(line, period_comma_2, " $1 $2");
  line = std::regex_replace(line, dash, "$1 $2 ");
  return join(utf8::split_whitespace(line), " ");
}

BleuResult bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
  check_sizes(hypotheses, references);
  BleuResult r;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = tokens_13a(hypotheses[s]);
    const auto ref = tokens_13a(references[s]);
    r.hyp_len += hyp.size();
    r.ref_len += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      if (hyp.size() >= n) r.totals[n - 1] += hyp.size() - n + 1;
      r.matches[n - 1] += clipped_matches(count_ngrams(hyp, n), count_ngrams(ref, n));
    }
  }
  if (r.hyp_len == 0) {
    r.degenerate = true;
    return r;
  }
  r.brevity_penalty =
      r.hyp_len < r.ref_len ? std::exp(1.0 - static_cast<double>(r.ref_len) / static_cast<double>(r.hyp_len)) : 1.0;

  double smooth = 1.0;
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    if (r.totals[n] == 0) {
      zero = true;
      continue;
    }
    if (r.matches[n] == 0) {
      smooth *= 2.0;
      r.precisions[n] = 100.0 / (smooth * static_cast<double>(r.totals[n]));
    } else {
      r.precisions[n] = 100.0 * static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]);
    }
    log_sum += std::log(r.precisions[n]);
  }
  r.score = zero ? 0.0 : r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

ChrfResult chrf(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
  check_sizes(hypotheses, references);
  constexpr std::size_t kOrder = 6;
  constexpr double kBeta = 2.0;
  std::array<std::size_t, kOrder> hyp_total{}, ref_total{}, matches{};
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    std::vector<std::string> hyp;
    std::vector<std::string> ref;
    for (const auto& w : utf8::split_whitespace(hypotheses[s])) {
      for (auto& c : utf8::characters(w)) hyp.push_back(std::move(c));
    }
    for (const auto& w : utf8::split_whitespace(references[s])) {
      for (auto& c : utf8::characters(w)) ref.push_back(std::move(c));
    }
    for (std::size_t n = 1; n <= kOrder; ++n) {
      if (hyp.size() >= n) hyp_total[n - 1] += hyp.size() - n + 1;
      if (ref.size() >= n) ref_total[n - 1] += ref.size() - n + 1;
      matches[n - 1] += clipped_matches(count_ngrams(hyp, n), count_ngrams(ref, n));
    }
  }
  ChrfResult r;
  for (std::size_t n = 0; n < kOrder; ++n) {
    if (hyp_total[n] == 0 || ref_total[n] == 0) continue;
    r.precision += static_cast<double>(matches[n]) / static_cast<double>(hyp_total[n]);
    r.recall += static_cast<double>(matches[n]) / static_cast<double>(ref_total[n]);
    ++r.effective_order;
  }
  if (r.effective_order == 0) return r;
  r.precision /= static_cast<double>(r.effective_order);
  r.recall /= static_cast<double>(r.effective_order);
  const double b2 = kBeta * kBeta;
  const double denom = b2 * r.precision + r.recall;
  r.score = denom > 0.0 ? 100.0 * (1.0 + b2) * r.precision * r.recall / denom : 0.0;
  return r;
}

std::size_t edit_distance(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  std::vector<std::size_t> prev(ref.size() + 1), cur(ref.size() + 1);
  for (std::size_t j = 0; j <= ref.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[ref.size()];
}

TerEdits ter_edits(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  TerEdits result;
  result.ref_len = ref.size();
  if (ref.empty()) {
    result.edit_distance = hyp.size();
    return result;
  }

  std::set<std::vector<std::string>> ref_blocks;
  for (std::size_t n = 1; n <= kTerMaxShiftSize; ++n) {
    for (const auto& [gram, c] : count_ngrams(ref, n)) ref_blocks.insert(gram);
  }

  std::vector<std::string> cur = hyp;
  std::size_t dist = edit_distance(cur, ref);
  while (dist > 0) {
    std::size_t best_dist = dist;
    std::vector<std::string> best;
    for (std::size_t i = 0; i < cur.size(); ++i) {
      for (std::size_t len = 1; len <= kTerMaxShiftSize && i + len <= cur.size(); ++len) {
        const auto first = cur.begin() + static_cast<std::ptrdiff_t>(i);
        const std::vector<std::string> block(first, first + static_cast<std::ptrdiff_t>(len));
        if (!ref_blocks.count(block)) break;  // longer blocks cannot match either
        std::vector<std::string> rest(cur.begin(), first);
        rest.insert(rest.end(), first + static_cast<std::ptrdiff_t>(len), cur.end());
        for (std::size_t dest = 0; dest <= rest.size(); ++dest) {
          if (dest == i) continue;
          const std::size_t moved = dest > i ? dest - i : i - dest;
          if (moved > kTerMaxShiftDistance) continue;
          std::vector<std::string> candidate = rest;
          candidate.insert(candidate.begin() + static_cast<std::ptrdiff_t>(dest), block.begin(), block.end());
          const std::size_t d = edit_distance(candidate, ref);
          if (d < best_dist) {
            best_dist = d;
            best = std::move(candidate);
          }
        }
      }
    }
    if (best_dist + 1 > dist) break;  // a shift costs one edit; it must pay for itself
    cur = std::move(best);
    dist = best_dist;
    ++result.shifts;
  }
  result.edit_distance = dist;
  return result;
}

TerResult ter(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
  check_sizes(hypotheses, references);
  TerResult r;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = tokens_13a(hypotheses[s]);
    const auto ref = tokens_13a(references[s]);
    const TerEdits e = ter_edits(hyp, ref);
    if (ref.empty() && !hyp.empty()) r.degenerate = true;
    r.edits += e.edits();
    r.ref_len += e.ref_len;
  }
  const double denom = r.ref_len == 0 ? 1.0 : static_cast<double>(r.ref_len);
  r.score = 100.0 * static_cast<double>(r.edits) / denom;
  return r;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["system_name"] = report.system_name;
  j["target_label"] = report.target_label;
  j["bleu"] = report.bleu ? nlohmann::ordered_json(*report.bleu) : nlohmann::ordered_json(nullptr);
  j["chrf"] = report.chrf ? nlohmann::ordered_json(*report.chrf) : nlohmann::ordered_json(nullptr);
  j["ter"] = report.ter ? nlohmann::ordered_json(*report.ter) : nlohmann::ordered_json(nullptr);
  j["sentence_count"] = report.sentence_count;
  j["decoding_settings"] = report.decoding_settings;
  return j;
}

MetricSelection parse_metric_list(std::string_view list) {
  MetricSelection sel{false, false, false};
  std::string item;
  std::istringstream in{std::string(list)};
  bool any = false;
  while (std::getline(in, item, ',')) {
    item = utf8::trim(item);
    if (item == "bleu") {
      sel.bleu = true;
    } else if (item == "chrf") {
      sel.chrf = true;
    } else if (item == "ter") {
      sel.ter = true;
    } else {
      throw ConfigError("unknown metric '" + item + "' (expected bleu, chrf, ter)");
    }
    any = true;
  }
  if (!any) throw ConfigError("no metrics selected");
  return sel;
}

std::vector<EvalReport> evaluate(const std::vector<std::string>& hypotheses,
                                 const std::vector<std::string>& references,
                                 const std::vector<std::string>* labels, const MetricSelection& metrics,
                                 const std::string& system_name, const std::string& decoding_settings) {
  check_sizes(hypotheses, references);
  if (labels && labels->size() != hypotheses.size()) {
    throw PairingError("labels have " + std::to_string(labels->size()) + " lines but hypothesis has " +
                       std::to_string(hypotheses.size()));
  }
  auto score = [&](const std::vector<std::string>& h, const std::vector<std::string>& r, const std::string& label) {
    EvalReport rep;
    rep.system_name = system_name;
    rep.target_label = label;
    rep.sentence_count = h.size();
    rep.decoding_settings = decoding_settings;
    if (metrics.bleu) rep.bleu = bleu(h, r).score;
    if (metrics.chrf) rep.chrf = chrf(h, r).score;
    if (metrics.ter) rep.ter = ter(h, r).score;
    return rep;
  };
  if (!labels) return {score(hypotheses, references, "all")};

  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> groups;
  for (std::size_t i = 0; i < labels->size(); ++i) {
    const std::string label = utf8::trim((*labels)[i]);
    auto [it, inserted] = groups.try_emplace(label);
    if (inserted) order.push_back(label);
    it->second.first.push_back(hypotheses[i]);
    it->second.second.push_back(references[i]);
  }
  std::vector<EvalReport> out;
  if (order.size() > 1) out.push_back(score(hypotheses, references, "pooled (" + join(order, "/") + ")"));
  for (const auto& label : order) out.push_back(score(groups[label].first, groups[label].second, label));
  return out;
}

std::vector<EvalReport> evaluate_corpus(const std::filesystem::path& hyp_file, const std::filesystem::path& ref_file,
                                        const std::optional<std::filesystem::path>& labels_file,
                                        const MetricSelection& metrics, const std::string& system_name,
                                        const std::string& decoding_settings) {
  const auto hyps = read_text_lines(hyp_file);
  const auto refs = read_text_lines(ref_file);
  if (labels_file) {
    const auto labels = read_text_lines(*labels_file);
    return evaluate(hyps, refs, &labels, metrics, system_name, decoding_settings);
  }
  return evaluate(hyps, refs, nullptr, metrics, system_name, decoding_settings);
}

std::string format_report_table(const std::vector<EvalReport>& reports) {
  std::vector<std::array<std::string, 6>> rows;
  rows.push_back({"system", "target", "BLEU", "chrF", "TER", "sentences"});
  for (const auto& r : reports) {
    rows.push_back({r.system_name, r.target_label, format_score(r.bleu), format_score(r.chrf), format_score(r.ter),
                    std::to_string(r.sentence_count)});
  }
  std::array<std::size_t, 6> width{};
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < 6; ++c) width[c] = std::max(width[c], utf8::code_points(row[c]).size());
  }
  std::ostringstream out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < 6; ++c) {
      out << row[c];
      if (c + 1 < 6) out << std::string(width[c] - utf8::code_points(row[c]).size() + 2, ' ');
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace gbemt
