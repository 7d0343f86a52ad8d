#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "medsum/common.hpp"
#include "medsum/corpus.hpp"
#include "medsum/text.hpp"

namespace medsum {

struct EntitySpan {
  std::string surface;
  std::size_t start = 0;  // byte offset into the source text
  std::size_t end = 0;    // exclusive
  std::string category;
};

// Recognizers return non-overlapping spans in left-to-right order.
class Recognizer {
 public:
  virtual ~Recognizer() = default;
  virtual std::vector<EntitySpan> recognize(const std::string& text) const = 0;
};

// Global entity inventory harvested from training reference summaries.
// Entries are normalized surfaces; counts are total occurrences.
struct EntityDictionary {
  std::map<std::string, std::size_t> entries;  // ordered for determinism

  void add(const std::string& surface) { ++entries[normalize_text(surface)]; }
  bool contains(const std::string& surface) const {
    return entries.count(normalize_text(surface)) > 0;
  }
  std::size_t size() const { return entries.size(); }
};

namespace detail {

inline bool is_word_cp(CodePoint cp) {
  if (cp < 0x80) return std::isalnum(static_cast<int>(cp)) != 0;
  return !is_unicode_space(cp);  // non-ASCII letters count as word chars
}

struct WordSpan {
  std::string norm;  // normalized word text
  std::size_t start = 0;
  std::size_t end = 0;
};

inline std::vector<WordSpan> word_spans(const std::string& text) {
  std::vector<WordSpan> words;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t at = i;
    CodePoint cp = utf8_decode(text, i);
    if (!is_word_cp(cp)) continue;
    WordSpan w;
    w.start = at;
    std::string raw;
    utf8_append(raw, cp);
    w.end = i;
    while (i < text.size()) {
      std::size_t next = i;
      CodePoint c = utf8_decode(text, next);
      if (!is_word_cp(c)) break;
      utf8_append(raw, c);
      i = next;
      w.end = i;
    }
    w.norm = normalize_text(raw);
    words.push_back(std::move(w));
  }
  return words;
}

}  // namespace detail

// Lexicon file: one term per line, optional tab-separated category,
// '#' starts a comment.
struct Lexicon {
  // key: normalized term words joined by single spaces
  std::unordered_map<std::string, std::string> terms;
  std::size_t max_words = 0;

  void add(const std::string& term, const std::string& category = "") {
    auto words = detail::word_spans(term);
    if (words.empty()) return;
    std::string key;
    for (const auto& w : words) {
      if (!key.empty()) key += ' ';
      key += w.norm;
    }
    terms[key] = category;
    max_words = std::max(max_words, words.size());
  }

  static Lexicon load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open lexicon file: " + path);
    Lexicon lex;
    std::string line;
    while (std::getline(in, line)) {
      if (auto hash = line.find('#'); hash != std::string::npos)
        line.erase(hash);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::string term = line, category;
      if (auto tab = line.find('\t'); tab != std::string::npos) {
        term = line.substr(0, tab);
        category = normalize_text(line.substr(tab + 1));
      }
      lex.add(term, category);
    }
    return lex;
  }
};

// Case-insensitive greedy longest-match over a term lexicon, left to right,
// on word boundaries. Ties broken by the longer span.
class LexiconMatcher : public Recognizer {
 public:
  explicit LexiconMatcher(Lexicon lexicon) : lexicon_(std::move(lexicon)) {}

  std::vector<EntitySpan> recognize(const std::string& text) const override {
    std::vector<EntitySpan> spans;
    const auto words = detail::word_spans(text);
    std::size_t i = 0;
    while (i < words.size()) {
      std::size_t best_len = 0;
      const std::string* best_cat = nullptr;
      std::string key;
      for (std::size_t n = 1;
           n <= lexicon_.max_words && i + n <= words.size(); ++n) {
        if (n > 1) key += ' ';
        key += words[i + n - 1].norm;
        auto it = lexicon_.terms.find(key);
        if (it != lexicon_.terms.end()) {
          best_len = n;
          best_cat = &it->second;
        }
      }
      if (best_len == 0) {
        ++i;
        continue;
      }
      EntitySpan span;
      span.start = words[i].start;
      span.end = words[i + best_len - 1].end;
      span.surface = text.substr(span.start, span.end - span.start);
      span.category = *best_cat;
      spans.push_back(std::move(span));
      i += best_len;
    }
    return spans;
  }

 private:
  Lexicon lexicon_;
};

inline EntityDictionary build_entity_dictionary(const Dataset& train,
                                                const Recognizer& recognizer) {
  if (train.pairs.empty())
    throw InvalidArgument("cannot build entity dictionary from empty dataset");
  EntityDictionary dict;
  for (const auto& pair : train.pairs) {
    std::vector<EntitySpan> spans;
    try {
      spans = recognizer.recognize(pair.faq);
    } catch (const Error& e) {
      throw Error("recognizer failed on pair '" + pair.id + "': " + e.what());
    }
    for (const auto& s : spans) dict.add(s.surface);
  }
  return dict;
}

// Fraction of pairs whose reference summary yields at least one entity.
inline double focus_identification_rate(const Dataset& ds,
                                        const Recognizer& recognizer) {
  if (ds.pairs.empty())
    throw InvalidArgument("focus identification rate undefined on empty dataset");
  std::size_t with_focus = 0;
  for (const auto& pair : ds.pairs)
    if (!recognizer.recognize(pair.faq).empty()) ++with_focus;
  return static_cast<double>(with_focus) / static_cast<double>(ds.size());
}

}  // namespace medsum
