#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "medsum/common.hpp"
#include "medsum/corpus.hpp"
#include "medsum/entities.hpp"
#include "medsum/rng.hpp"

namespace medsum {

struct Replacement {
  std::string original;     // entity surface in the source summary
  std::string replacement;  // dictionary entry substituted in
  std::size_t start = 0;    // byte span of the replacement in the negative
  std::size_t end = 0;
};

enum class NegativeFlag { ok, no_entities, empty_candidate_pool };

inline const char* to_string(NegativeFlag f) {
  switch (f) {
    case NegativeFlag::ok: return "ok";
    case NegativeFlag::no_entities: return "no-entities";
    case NegativeFlag::empty_candidate_pool: return "empty-candidate-pool";
  }
  return "ok";
}

inline NegativeFlag negative_flag_from_string(const std::string& s) {
  if (s == "no-entities") return NegativeFlag::no_entities;
  if (s == "empty-candidate-pool") return NegativeFlag::empty_candidate_pool;
  return NegativeFlag::ok;
}

struct HardNegativeSet {
  std::string source_id;
  std::vector<std::string> negatives;
  std::vector<std::vector<Replacement>> provenance;  // parallel to negatives
  NegativeFlag flag = NegativeFlag::ok;

  bool empty() const { return negatives.empty(); }
};

// One negative replaces every entity span of the source summary with an
// entity drawn uniformly from the dictionary minus the source's own
// entities; X negatives per source. Deterministic under `seed`.
inline HardNegativeSet generate_hard_negatives(
    const std::string& faq, const std::vector<EntitySpan>& entities,
    const EntityDictionary& dictionary, std::size_t x, CounterRng rng) {
  HardNegativeSet set;
  if (entities.empty()) {
    set.flag = NegativeFlag::no_entities;
    return set;
  }
  for (std::size_t i = 0; i + 1 < entities.size(); ++i)
    if (entities[i].end > entities[i + 1].start)
      throw InvalidArgument("entity spans must be non-overlapping and sorted");
  if (!entities.empty() && entities.back().end > faq.size())
    throw InvalidArgument("entity span exceeds summary length");
  if (x == 0) throw InvalidArgument("negative count X must be >= 1");

  std::set<std::string> own;  // M, normalized
  for (const auto& e : entities) own.insert(normalize_text(e.surface));
  std::vector<std::string> candidates;  // D' = D \ M, in dictionary order
  for (const auto& [surface, count] : dictionary.entries) {
    (void)count;
    if (!own.count(surface)) candidates.push_back(surface);
  }
  if (candidates.empty()) {
    set.flag = NegativeFlag::empty_candidate_pool;
    return set;
  }

  for (std::size_t k = 0; k < x; ++k) {
    std::string neg;
    std::vector<Replacement> prov;
    std::size_t cursor = 0;
    for (const auto& span : entities) {
      neg.append(faq, cursor, span.start - cursor);
      const std::string& pick =
          candidates[rng.next_below(candidates.size())];
      Replacement r;
      r.original = span.surface;
      r.replacement = pick;
      r.start = neg.size();
      neg += pick;
      r.end = neg.size();
      prov.push_back(std::move(r));
      cursor = span.end;
    }
    neg.append(faq, cursor, faq.size() - cursor);
    set.negatives.push_back(std::move(neg));
    set.provenance.push_back(std::move(prov));
  }
  return set;
}

inline HardNegativeSet generate_hard_negatives(
    const std::string& faq, const std::vector<EntitySpan>& entities,
    const EntityDictionary& dictionary, std::size_t x, std::uint64_t seed) {
  return generate_hard_negatives(faq, entities, dictionary, x,
                                 CounterRng(seed, "hard-negatives"));
}

using NegativePool = std::map<std::string, HardNegativeSet>;

// Per-pair generation is keyed on (seed, pair id), so pool contents do not
// depend on iteration or parallelization order.
inline NegativePool build_negative_pool(const Dataset& train,
                                        const Recognizer& recognizer,
                                        const EntityDictionary& dictionary,
                                        std::size_t x, std::uint64_t seed) {
  NegativePool pool;
  CounterRng base(seed, "hard-negatives");
  for (const auto& pair : train.pairs) {
    std::vector<EntitySpan> spans;
    try {
      spans = recognizer.recognize(pair.faq);
    } catch (const Error& e) {
      throw Error("recognizer failed on pair '" + pair.id + "': " + e.what());
    }
    HardNegativeSet set = generate_hard_negatives(pair.faq, spans, dictionary,
                                                  x, base.derive(pair.id));
    set.source_id = pair.id;
    pool.emplace(pair.id, std::move(set));
  }
  return pool;
}

struct HardBatch {
  std::vector<std::string> texts;
  bool with_replacement = false;  // union smaller than n_h
};

// Draws n_h negatives uniformly without replacement from the union of the
// batch members' pools; falls back to with-replacement when the union is
// too small.
inline HardBatch draw_hard_batch(const NegativePool& pool,
                                 const std::vector<std::string>& batch_ids,
                                 std::size_t n_h, CounterRng rng) {
  if (n_h == 0) throw InvalidArgument("hard batch size n_h must be >= 1");
  std::vector<const std::string*> all;
  for (const auto& id : batch_ids) {
    auto it = pool.find(id);
    if (it == pool.end()) continue;
    for (const auto& neg : it->second.negatives) all.push_back(&neg);
  }
  if (all.empty())
    throw InvalidArgument("no hard negatives available for this batch");

  HardBatch out;
  if (all.size() >= n_h) {
    // partial Fisher-Yates: the first n_h slots end up a uniform sample
    for (std::size_t i = 0; i < n_h; ++i) {
      std::size_t j = i + static_cast<std::size_t>(
                              rng.next_below(all.size() - i));
      std::swap(all[i], all[j]);
      out.texts.push_back(*all[i]);
    }
  } else {
    out.with_replacement = true;
    for (std::size_t i = 0; i < n_h; ++i)
      out.texts.push_back(*all[rng.next_below(all.size())]);
  }
  return out;
}

inline HardBatch draw_hard_batch(const NegativePool& pool,
                                 const std::vector<std::string>& batch_ids,
                                 std::size_t n_h, std::uint64_t seed) {
  return draw_hard_batch(pool, batch_ids, n_h, CounterRng(seed, "hard-batch"));
}

// Pool file: JSONL, one record per pair.
inline void save_negative_pool(const NegativePool& pool,
                               const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write pool file: " + path);
  for (const auto& [id, set] : pool) {
    json prov = json::array();
    for (const auto& per_negative : set.provenance) {
      json entries = json::array();
      for (const auto& r : per_negative)
        entries.push_back({{"original", r.original},
                           {"replacement", r.replacement},
                           {"start", r.start},
                           {"end", r.end}});
      prov.push_back(std::move(entries));
    }
    json rec{{"id", id},
             {"negatives", set.negatives},
             {"provenance", prov},
             {"flag", to_string(set.flag)}};
    out << rec.dump() << '\n';
  }
}

inline NegativePool load_negative_pool(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open pool file: " + path);
  NegativePool pool;
  std::string line;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error&) {
      throw FormatError("bad JSON in pool record " + std::to_string(record));
    }
    HardNegativeSet set;
    set.source_id = rec.at("id").get<std::string>();
    set.negatives = rec.at("negatives").get<std::vector<std::string>>();
    for (const auto& per_negative : rec.at("provenance")) {
      std::vector<Replacement> prov;
      for (const auto& r : per_negative)
        prov.push_back({r.at("original").get<std::string>(),
                        r.at("replacement").get<std::string>(),
                        r.at("start").get<std::size_t>(),
                        r.at("end").get<std::size_t>()});
      set.provenance.push_back(std::move(prov));
    }
    set.flag = negative_flag_from_string(rec.value("flag", "ok"));
    pool.emplace(set.source_id, std::move(set));
    ++record;
  }
  return pool;
}

}  // namespace medsum
