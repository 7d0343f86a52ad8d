#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "medsum/negatives.hpp"

using namespace medsum;

namespace {

EntityDictionary toy_dictionary() {
  EntityDictionary dict;
  for (const char* e :
       {"asthma", "shingles", "metformin", "aspirin", "skin graft"})
    dict.add(e);
  return dict;
}

Lexicon toy_lexicon() {
  Lexicon lex;
  for (const char* e :
       {"asthma", "shingles", "metformin", "aspirin", "skin graft"})
    lex.add(e);
  return lex;
}

}  // namespace

TEST_CASE("every negative replaces every entity span") {
  const std::string faq = "does metformin worsen asthma";
  LexiconMatcher m(toy_lexicon());
  auto spans = m.recognize(faq);
  REQUIRE(spans.size() == 2);
  auto set = generate_hard_negatives(faq, spans, toy_dictionary(), 16, 7);
  CHECK(set.flag == NegativeFlag::ok);
  REQUIRE(set.negatives.size() == 16);
  REQUIRE(set.provenance.size() == 16);
  for (std::size_t k = 0; k < 16; ++k) {
    REQUIRE(set.provenance[k].size() == 2);
    CHECK(set.provenance[k][0].original == "metformin");
    CHECK(set.provenance[k][1].original == "asthma");
    // replacements never come from the source's own entity set
    for (const auto& r : set.provenance[k]) {
      CHECK(r.replacement != "metformin");
      CHECK(r.replacement != "asthma");
      CHECK(toy_dictionary().contains(r.replacement));
    }
    CHECK(set.negatives[k] != faq);
  }
}

TEST_CASE("provenance spans index into the generated negative") {
  CounterRng rng(3, "prop");
  EntityDictionary dict = toy_dictionary();
  LexiconMatcher m(toy_lexicon());
  const std::vector<std::string> faqs = {
      "asthma",
      "take aspirin for shingles pain",
      "a skin graft after shingles, then metformin",
      "prefix asthma middle aspirin suffix"};
  for (const auto& faq : faqs) {
    auto set = generate_hard_negatives(faq, m.recognize(faq), dict, 32,
                                       rng.derive(faq));
    REQUIRE(set.flag == NegativeFlag::ok);
    for (std::size_t k = 0; k < set.negatives.size(); ++k) {
      const std::string& neg = set.negatives[k];
      std::size_t prev_end = 0;
      for (const auto& r : set.provenance[k]) {
        REQUIRE(r.end <= neg.size());
        REQUIRE(r.start >= prev_end);
        CHECK(neg.substr(r.start, r.end - r.start) == r.replacement);
        prev_end = r.end;
      }
    }
  }
}

TEST_CASE("non-entity text is preserved around replacements") {
  const std::string faq = "prefix asthma suffix";
  LexiconMatcher m(toy_lexicon());
  auto set = generate_hard_negatives(faq, m.recognize(faq), toy_dictionary(),
                                     8, 11);
  for (const auto& neg : set.negatives) {
    CHECK(neg.substr(0, 7) == "prefix ");
    CHECK(neg.substr(neg.size() - 7) == " suffix");
  }
}

TEST_CASE("no entities yields an empty flagged set") {
  auto set = generate_hard_negatives("no medical words here", {},
                                     toy_dictionary(), 8, 1);
  CHECK(set.empty());
  CHECK(set.flag == NegativeFlag::no_entities);
}

TEST_CASE("candidate pool D minus M can be empty") {
  EntityDictionary dict;
  dict.add("asthma");
  LexiconMatcher m(toy_lexicon());
  const std::string faq = "asthma treatment";
  auto set = generate_hard_negatives(faq, m.recognize(faq), dict, 8, 1);
  CHECK(set.empty());
  CHECK(set.flag == NegativeFlag::empty_candidate_pool);
}

TEST_CASE("singleton candidate pool always substitutes that entry") {
  EntityDictionary dict;
  dict.add("asthma");
  dict.add("shingles");
  LexiconMatcher m(toy_lexicon());
  const std::string faq = "chronic asthma care";
  auto set = generate_hard_negatives(faq, m.recognize(faq), dict, 4, 1);
  REQUIRE(set.negatives.size() == 4);
  for (const auto& neg : set.negatives)
    CHECK(neg == "chronic shingles care");
}

TEST_CASE("x must be at least one and spans must be well formed") {
  LexiconMatcher m(toy_lexicon());
  const std::string faq = "asthma and shingles";
  auto spans = m.recognize(faq);
  CHECK_THROWS_AS(generate_hard_negatives(faq, spans, toy_dictionary(), 0, 1),
                  InvalidArgument);
  auto bad = spans;
  std::swap(bad[0], bad[1]);
  CHECK_THROWS_AS(generate_hard_negatives(faq, bad, toy_dictionary(), 4, 1),
                  InvalidArgument);
  auto overflow = spans;
  overflow.back().end = faq.size() + 3;
  CHECK_THROWS_AS(
      generate_hard_negatives(faq, overflow, toy_dictionary(), 4, 1),
      InvalidArgument);
}

TEST_CASE("generation is deterministic in the seed") {
  LexiconMatcher m(toy_lexicon());
  const std::string faq = "metformin for asthma";
  auto spans = m.recognize(faq);
  auto a = generate_hard_negatives(faq, spans, toy_dictionary(), 32, 5);
  auto b = generate_hard_negatives(faq, spans, toy_dictionary(), 32, 5);
  auto c = generate_hard_negatives(faq, spans, toy_dictionary(), 32, 6);
  CHECK(a.negatives == b.negatives);
  CHECK(a.negatives != c.negatives);
}

TEST_CASE("pool construction is independent of pair order") {
  Dataset ds;
  for (int i = 0; i < 6; ++i) {
    QuestionPair p;
    p.id = "p" + std::to_string(i);
    p.chq = "q";
    p.faq = "asthma case " + std::to_string(i);
    ds.pairs.push_back(p);
  }
  LexiconMatcher m(toy_lexicon());
  auto pool1 = build_negative_pool(ds, m, toy_dictionary(), 8, 42);
  std::reverse(ds.pairs.begin(), ds.pairs.end());
  auto pool2 = build_negative_pool(ds, m, toy_dictionary(), 8, 42);
  REQUIRE(pool1.size() == pool2.size());
  for (const auto& [id, set] : pool1)
    CHECK(set.negatives == pool2.at(id).negatives);
}

TEST_CASE("pool serialization round trips byte-identically") {
  Dataset ds;
  for (int i = 0; i < 4; ++i) {
    QuestionPair p;
    p.id = "p" + std::to_string(i);
    p.chq = "q";
    p.faq = i == 3 ? "nothing medical" : "shingles and metformin";
    ds.pairs.push_back(p);
  }
  LexiconMatcher m(toy_lexicon());
  auto pool = build_negative_pool(ds, m, toy_dictionary(), 8, 42);

  const std::string p1 = "/tmp/medsum_pool_a.jsonl";
  const std::string p2 = "/tmp/medsum_pool_b.jsonl";
  save_negative_pool(pool, p1);
  auto loaded = load_negative_pool(p1);
  REQUIRE(loaded.size() == pool.size());
  CHECK(loaded.at("p3").flag == NegativeFlag::no_entities);
  CHECK(loaded.at("p0").negatives == pool.at("p0").negatives);
  CHECK(loaded.at("p0").provenance.size() == pool.at("p0").provenance.size());
  save_negative_pool(loaded, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("hard batch draws n_h without replacement when possible") {
  Dataset ds;
  for (int i = 0; i < 3; ++i) {
    QuestionPair p;
    p.id = "p" + std::to_string(i);
    p.chq = "q";
    p.faq = "asthma case " + std::to_string(i);
    ds.pairs.push_back(p);
  }
  LexiconMatcher m(toy_lexicon());
  auto pool = build_negative_pool(ds, m, toy_dictionary(), 8, 1);

  auto batch = draw_hard_batch(pool, {"p0", "p1", "p2"}, 12, 9);
  CHECK(batch.texts.size() == 12);
  CHECK_FALSE(batch.with_replacement);

  auto again = draw_hard_batch(pool, {"p0", "p1", "p2"}, 12, 9);
  CHECK(batch.texts == again.texts);

  SUBCASE("small unions fall back to replacement") {
    auto big = draw_hard_batch(pool, {"p0"}, 64, 9);
    CHECK(big.texts.size() == 64);
    CHECK(big.with_replacement);
  }
  SUBCASE("empty unions are an error") {
    CHECK_THROWS_AS(draw_hard_batch(pool, {"missing"}, 4, 9),
                    InvalidArgument);
    CHECK_THROWS_AS(draw_hard_batch(pool, {"p0"}, 0, 9), InvalidArgument);
  }
  SUBCASE("draws come from the requested pairs' pools only") {
    std::set<std::string> allowed;
    for (const auto& id : {"p0", "p2"})
      for (const auto& n : pool.at(id).negatives) allowed.insert(n);
    auto two = draw_hard_batch(pool, {"p0", "p2"}, 10, 3);
    for (const auto& t : two.texts) CHECK(allowed.count(t) == 1);
  }
}
