#pragma once

#include <algorithm>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "medsum/common.hpp"
#include "medsum/corpus.hpp"
#include "medsum/entities.hpp"
#include "medsum/text.hpp"

namespace medsum {

namespace detail {

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(
    const std::vector<std::string>& tokens, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + i,
                                      tokens.begin() + i + n)];
  return counts;
}

inline double f1(double precision, double recall) {
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace detail

// Clipped n-gram overlap F1. Zero when either side has no n-grams.
inline double rouge_n(const std::string& candidate,
                      const std::string& reference, std::size_t n) {
  const auto cand = detail::ngram_counts(eval_tokenize(candidate), n);
  const auto ref = detail::ngram_counts(eval_tokenize(reference), n);
  std::size_t cand_total = 0, ref_total = 0, overlap = 0;
  for (const auto& [g, c] : cand) cand_total += c;
  for (const auto& [g, c] : ref) ref_total += c;
  if (cand_total == 0 || ref_total == 0) return 0.0;
  for (const auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  const double p = static_cast<double>(overlap) / cand_total;
  const double r = static_cast<double>(overlap) / ref_total;
  return detail::f1(p, r);
}

inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Sentence-level ROUGE-L: whole summary treated as one token sequence.
inline double rouge_l(const std::string& candidate,
                      const std::string& reference) {
  const auto cand = eval_tokenize(candidate);
  const auto ref = eval_tokenize(reference);
  if (cand.empty() || ref.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(cand, ref));
  return detail::f1(lcs / cand.size(), lcs / ref.size());
}

// Corpus-level ratio of reference entities recovered in generated
// summaries: sum_i |E(ref_i) ∩ E(gen_i)| / sum_i |E(ref_i)|.
inline double entity_consistency(const std::vector<std::string>& generated,
                                 const std::vector<std::string>& references,
                                 const Recognizer& recognizer) {
  if (generated.size() != references.size())
    throw InvalidArgument("entity_consistency: list length mismatch (" +
                          std::to_string(generated.size()) + " vs " +
                          std::to_string(references.size()) + ")");
  auto entity_set = [&](const std::string& text) {
    std::set<std::string> s;
    for (const auto& span : recognizer.recognize(text))
      s.insert(normalize_text(span.surface));
    return s;
  };
  std::size_t intersect_sum = 0, ref_sum = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    const auto ref_ents = entity_set(references[i]);
    if (ref_ents.empty()) continue;
    const auto gen_ents = entity_set(generated[i]);
    ref_sum += ref_ents.size();
    for (const auto& e : ref_ents) intersect_sum += gen_ents.count(e);
  }
  if (ref_sum == 0)
    throw InvalidArgument(
        "entity_consistency undefined: no reference entities");
  return static_cast<double>(intersect_sum) / static_cast<double>(ref_sum);
}

struct SampleScore {
  std::string id;
  std::string generated;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rouge_l = 0.0;
  bool failed = false;
};

struct MetricsReport {
  std::string dataset;
  std::size_t samples = 0;
  double rouge1_f1 = 0.0;
  double rouge2_f1 = 0.0;
  double rougeL_f1 = 0.0;
  double entity_consistency = 0.0;
  std::vector<SampleScore> rows;
};

// Scores a summarizer (any text -> text callable) over a test split.
// Per-sample generation failures score zero and are flagged, not fatal.
inline MetricsReport evaluate_generator(
    const std::function<std::string(const QuestionPair&)>& summarize,
    const Dataset& test, const Recognizer& recognizer,
    bool keep_rows = false) {
  MetricsReport report;
  report.dataset = test.name;
  report.samples = test.size();

  std::vector<std::string> generated, references;
  double r1 = 0, r2 = 0, rl = 0;
  for (const auto& pair : test.pairs) {
    SampleScore row;
    row.id = pair.id;
    try {
      row.generated = summarize(pair);
    } catch (const Error&) {
      row.failed = true;
    }
    row.rouge1 = rouge_n(row.generated, pair.faq, 1);
    row.rouge2 = rouge_n(row.generated, pair.faq, 2);
    row.rouge_l = rouge_l(row.generated, pair.faq);
    r1 += row.rouge1;
    r2 += row.rouge2;
    rl += row.rouge_l;
    generated.push_back(row.generated);
    references.push_back(pair.faq);
    if (keep_rows) report.rows.push_back(std::move(row));
  }
  if (report.samples > 0) {
    r1 /= report.samples;
    r2 /= report.samples;
    rl /= report.samples;
  }
  report.rouge1_f1 = r1;
  report.rouge2_f1 = r2;
  report.rougeL_f1 = rl;
  try {
    report.entity_consistency =
        entity_consistency(generated, references, recognizer);
  } catch (const InvalidArgument&) {
    report.entity_consistency = 0.0;  // no reference entities in the split
  }
  return report;
}

inline json to_json(const MetricsReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"id", row.id},
                    {"generated", row.generated},
                    {"rouge1", row.rouge1},
                    {"rouge2", row.rouge2},
                    {"rougeL", row.rouge_l},
                    {"failed", row.failed}});
  json out{{"dataset", r.dataset},
           {"samples", r.samples},
           {"rouge1_f1", r.rouge1_f1},
           {"rouge2_f1", r.rouge2_f1},
           {"rougeL_f1", r.rougeL_f1},
           {"entity_consistency", r.entity_consistency}};
  if (!r.rows.empty()) out["rows"] = rows;
  return out;
}

// Aligned dataset x metric grid. Scores computed with this framework's own
// tokenizer; not comparable across ROUGE implementations.
inline std::string render_metrics_table(
    const std::vector<MetricsReport>& reports) {
  std::ostringstream out;
  out << "# scores from the built-in tokenizer (lowercase, ws+punct split);"
      << " not comparable across ROUGE implementations\n";
  out << std::left << std::setw(28) << "dataset" << std::right
      << std::setw(10) << "R1" << std::setw(10) << "R2" << std::setw(10)
      << "RL" << std::setw(14) << "EntConsist" << std::setw(10) << "N"
      << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& r : reports) {
    out << std::left << std::setw(28) << r.dataset << std::right
        << std::setw(10) << r.rouge1_f1 << std::setw(10) << r.rouge2_f1
        << std::setw(10) << r.rougeL_f1 << std::setw(14)
        << r.entity_consistency << std::setw(10) << r.samples << '\n';
  }
  return out.str();
}

}  // namespace medsum
