#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "medsum/common.hpp"
#include "medsum/rng.hpp"
#include "medsum/text.hpp"

namespace medsum {

using json = nlohmann::json;

struct QuestionPair {
  std::string id;
  std::string chq;  // consumer health question (long form)
  std::string faq;  // reference summary (short form)
};

struct Dataset {
  std::string name;
  std::vector<QuestionPair> pairs;

  std::size_t size() const { return pairs.size(); }
};

struct SplitSet {
  Dataset train;
  Dataset dev;
  Dataset test;
};

struct DuplicateGroup {
  std::string canonical_id;
  std::vector<std::string> duplicate_ids;  // non-canonical members
};

struct DuplicateReport {
  std::size_t total = 0;
  std::vector<DuplicateGroup> duplicate_groups;
  std::size_t removed = 0;
  std::size_t retained = 0;
};

struct LeakEntry {
  std::string split_a;
  std::string id_a;
  std::string split_b;
  std::string id_b;
};

struct LeakageReport {
  std::vector<LeakEntry> entries;

  bool clean() const { return entries.empty(); }
};

enum class FileFormat { jsonl, csv, tsv };

struct FieldMap {
  std::string id = "id";
  std::string chq = "chq";
  std::string faq = "faq";
};

inline FileFormat format_from_name(const std::string& name) {
  if (name == "jsonl") return FileFormat::jsonl;
  if (name == "csv") return FileFormat::csv;
  if (name == "tsv") return FileFormat::tsv;
  throw InvalidArgument("unknown dataset format: " + name);
}

inline FileFormat guess_format(const std::string& path) {
  auto ends_with = [&](std::string_view suf) {
    return path.size() >= suf.size() &&
           path.compare(path.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends_with(".csv")) return FileFormat::csv;
  if (ends_with(".tsv")) return FileFormat::tsv;
  return FileFormat::jsonl;
}

namespace detail {

// RFC-4180-ish row parser with quoted fields.
inline std::vector<std::string> parse_delimited_row(const std::string& line,
                                                    char sep) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"' && cur.empty()) {
      quoted = true;
    } else if (c == sep) {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline void validate_utf8(const std::string& s, std::size_t line_start) {
  std::size_t i = 0;
  while (i < s.size()) {
    try {
      utf8_decode(s, i);
    } catch (const FormatError&) {
      throw FormatError("malformed UTF-8 at byte offset " +
                        std::to_string(line_start + i));
    }
  }
}

}  // namespace detail

inline Dataset load_dataset(const std::string& path, FileFormat format,
                            const FieldMap& fields = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset file: " + path);

  Dataset ds;
  ds.name = path;
  std::string line;
  std::size_t record = 0;
  std::size_t byte_offset = 0;

  auto add_pair = [&](std::optional<std::string> id, std::string chq,
                      std::string faq) {
    QuestionPair p;
    p.id = id ? *id : std::to_string(ds.pairs.size());
    p.chq = std::move(chq);
    p.faq = std::move(faq);
    ds.pairs.push_back(std::move(p));
  };

  if (format == FileFormat::jsonl) {
    while (std::getline(in, line)) {
      const std::size_t line_start = byte_offset;
      byte_offset += line.size() + 1;
      if (line.empty()) continue;
      detail::validate_utf8(line, line_start);
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::parse_error& e) {
        throw FormatError("bad JSON in record " + std::to_string(record) +
                          " near byte offset " +
                          std::to_string(line_start + e.byte));
      }
      for (const std::string* f : {&fields.chq, &fields.faq}) {
        if (!rec.contains(*f) || !rec[*f].is_string())
          throw FormatError("record " + std::to_string(record) +
                            " missing field '" + *f + "'");
      }
      std::optional<std::string> id;
      if (rec.contains(fields.id) && rec[fields.id].is_string())
        id = rec[fields.id].get<std::string>();
      add_pair(id, rec[fields.chq].get<std::string>(),
               rec[fields.faq].get<std::string>());
      ++record;
    }
  } else {
    const char sep = format == FileFormat::csv ? ',' : '\t';
    if (!std::getline(in, line))
      throw FormatError("empty delimited file: " + path);
    byte_offset = line.size() + 1;
    auto header = detail::parse_delimited_row(line, sep);
    auto col = [&](const std::string& name) -> std::optional<std::size_t> {
      auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) return std::nullopt;
      return static_cast<std::size_t>(it - header.begin());
    };
    auto chq_col = col(fields.chq);
    auto faq_col = col(fields.faq);
    auto id_col = col(fields.id);
    if (!chq_col)
      throw FormatError("header missing column '" + fields.chq + "'");
    if (!faq_col)
      throw FormatError("header missing column '" + fields.faq + "'");
    while (std::getline(in, line)) {
      const std::size_t line_start = byte_offset;
      byte_offset += line.size() + 1;
      if (line.empty()) continue;
      detail::validate_utf8(line, line_start);
      auto row = detail::parse_delimited_row(line, sep);
      if (row.size() <= std::max(*chq_col, *faq_col))
        throw FormatError("record " + std::to_string(record) +
                          " has too few columns");
      std::optional<std::string> id;
      if (id_col && *id_col < row.size() && !row[*id_col].empty())
        id = row[*id_col];
      add_pair(id, row[*chq_col], row[*faq_col]);
      ++record;
    }
  }

  std::unordered_set<std::string> seen;
  for (const auto& p : ds.pairs)
    if (!seen.insert(p.id).second)
      throw FormatError("duplicate pair id '" + p.id + "' in " + path);
  return ds;
}

inline Dataset load_dataset(const std::string& path,
                            const FieldMap& fields = {}) {
  return load_dataset(path, guess_format(path), fields);
}

inline void save_dataset_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write dataset file: " + path);
  for (const auto& p : ds.pairs) {
    json rec{{"id", p.id}, {"chq", p.chq}, {"faq", p.faq}};
    out << rec.dump() << '\n';
  }
}

inline std::string pair_key(const QuestionPair& p) {
  return normalize_text(p.chq) + '\x1f' + normalize_text(p.faq);
}

// Two pairs are duplicates iff both normalized fields match exactly; the
// first occurrence in dataset order is the canonical member.
inline DuplicateReport find_duplicates(const Dataset& ds) {
  DuplicateReport report;
  report.total = ds.size();

  std::unordered_map<std::string, std::size_t> first_index;
  std::unordered_map<std::size_t, std::vector<std::string>> groups;
  std::vector<std::size_t> group_order;
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    const std::string key = pair_key(ds.pairs[i]);
    auto [it, inserted] = first_index.emplace(key, i);
    if (!inserted) {
      auto [git, fresh] = groups.try_emplace(it->second);
      if (fresh) group_order.push_back(it->second);
      git->second.push_back(ds.pairs[i].id);
      ++report.removed;
    }
  }
  std::sort(group_order.begin(), group_order.end());
  for (std::size_t idx : group_order)
    report.duplicate_groups.push_back(
        {ds.pairs[idx].id, std::move(groups[idx])});
  report.retained = report.total - report.removed;
  return report;
}

// Optional fuzzy mode: token 3-shingle Jaccard over the concatenated
// normalized pair text. Quadratic; intended for audits, not pipelines.
inline DuplicateReport find_near_duplicates(const Dataset& ds,
                                            double threshold = 0.9) {
  auto shingles = [](const QuestionPair& p) {
    auto toks = split_whitespace(pair_key(p));
    std::set<std::string> sh;
    if (toks.size() < 3) {
      std::string all;
      for (const auto& t : toks) all += t + ' ';
      sh.insert(all);
      return sh;
    }
    for (std::size_t i = 0; i + 3 <= toks.size(); ++i)
      sh.insert(toks[i] + ' ' + toks[i + 1] + ' ' + toks[i + 2]);
    return sh;
  };
  std::vector<std::set<std::string>> sh(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) sh[i] = shingles(ds.pairs[i]);

  DuplicateReport report;
  report.total = ds.size();
  std::vector<std::size_t> owner(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) owner[i] = i;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (owner[i] != i) continue;
    for (std::size_t j = i + 1; j < ds.size(); ++j) {
      if (owner[j] != j) continue;
      std::size_t inter = 0;
      for (const auto& s : sh[i]) inter += sh[j].count(s);
      const std::size_t uni = sh[i].size() + sh[j].size() - inter;
      if (uni == 0) continue;
      if (static_cast<double>(inter) / static_cast<double>(uni) >= threshold)
        owner[j] = i;
    }
  }
  std::unordered_map<std::size_t, std::vector<std::string>> groups;
  std::vector<std::size_t> group_order;
  for (std::size_t j = 0; j < ds.size(); ++j) {
    if (owner[j] == j) continue;
    auto [it, fresh] = groups.try_emplace(owner[j]);
    if (fresh) group_order.push_back(owner[j]);
    it->second.push_back(ds.pairs[j].id);
    ++report.removed;
  }
  for (std::size_t idx : group_order)
    report.duplicate_groups.push_back(
        {ds.pairs[idx].id, std::move(groups[idx])});
  report.retained = report.total - report.removed;
  return report;
}

inline std::pair<Dataset, DuplicateReport> deduplicate(const Dataset& ds) {
  DuplicateReport report = find_duplicates(ds);
  std::unordered_set<std::string> drop;
  for (const auto& g : report.duplicate_groups)
    for (const auto& id : g.duplicate_ids) drop.insert(id);

  Dataset out;
  out.name = ds.name;
  out.pairs.reserve(report.retained);
  for (const auto& p : ds.pairs)
    if (!drop.count(p.id)) out.pairs.push_back(p);
  return {std::move(out), std::move(report)};
}

inline LeakageReport check_leakage(const SplitSet& splits) {
  LeakageReport report;
  struct Loc {
    const char* split;
    const std::string* id;
  };
  std::unordered_map<std::string, Loc> seen;
  auto scan = [&](const Dataset& ds, const char* split_name) {
    for (const auto& p : ds.pairs) {
      const std::string key = pair_key(p);
      auto it = seen.find(key);
      if (it == seen.end()) {
        seen.emplace(key, Loc{split_name, &p.id});
      } else if (std::string_view(it->second.split) != split_name) {
        report.entries.push_back(
            {it->second.split, *it->second.id, split_name, p.id});
      }
    }
  };
  scan(splits.train, "train");
  scan(splits.dev, "dev");
  scan(splits.test, "test");
  return report;
}

struct SplitSizes {
  std::size_t train = 0;
  std::size_t dev = 0;
  std::size_t test = 0;
};

// Deduplicates, shuffles deterministically under `seed`, then partitions.
// Leakage-free by construction.
inline SplitSet split_dataset(const Dataset& ds, SplitSizes sizes,
                              std::uint64_t seed) {
  auto [clean, report] = deduplicate(ds);
  (void)report;
  const std::size_t need = sizes.train + sizes.dev + sizes.test;
  if (need > clean.size())
    throw InvalidArgument("split sizes require " + std::to_string(need) +
                          " pairs but only " + std::to_string(clean.size()) +
                          " available after deduplication");

  std::vector<std::size_t> order(clean.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  CounterRng rng(seed, "split");
  rng.shuffle(order);

  SplitSet out;
  out.train.name = ds.name + "/train";
  out.dev.name = ds.name + "/dev";
  out.test.name = ds.name + "/test";
  std::size_t k = 0;
  for (std::size_t i = 0; i < sizes.train; ++i)
    out.train.pairs.push_back(clean.pairs[order[k++]]);
  for (std::size_t i = 0; i < sizes.dev; ++i)
    out.dev.pairs.push_back(clean.pairs[order[k++]]);
  for (std::size_t i = 0; i < sizes.test; ++i)
    out.test.pairs.push_back(clean.pairs[order[k++]]);
  return out;
}

inline json to_json(const DuplicateReport& r) {
  json groups = json::array();
  for (const auto& g : r.duplicate_groups) {
    groups.push_back(
        {{"canonical_id", g.canonical_id}, {"duplicate_ids", g.duplicate_ids}});
  }
  return json{{"total", r.total},
              {"duplicate_groups", groups},
              {"removed", r.removed},
              {"retained", r.retained}};
}

inline json to_json(const LeakageReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"split_a", e.split_a},
                       {"id_a", e.id_a},
                       {"split_b", e.split_b},
                       {"id_b", e.id_b}});
  return json{{"entries", entries}, {"clean", r.clean()}};
}

}  // namespace medsum
