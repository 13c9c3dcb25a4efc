#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <sstream>

#include "tkgr/tkg.hpp"

using namespace tkgr;

namespace {

std::vector<Quadruple> parse(const std::string& text, Vocabs& vocabs) {
  std::istringstream in(text);
  return parse_quadruple_file(in, vocabs);
}

}  // namespace

TEST_CASE("quadruple parsing builds dense first-seen vocabularies") {
  Vocabs vocabs;
  const auto facts = parse(
      "alice\tknows\tbob\t2020-01-01\n"
      "bob\tknows\tcarol\t2020-01-02\n"
      "alice\tvisits\tparis\t2020-01-02\n",
      vocabs);
  REQUIRE(facts.size() == 3);
  REQUIRE(vocabs.entities.size() == 4);
  REQUIRE(vocabs.relations.size() == 2);
  REQUIRE(vocabs.timestamps.size() == 2);
  REQUIRE(vocabs.entities.name(0) == "alice");
  REQUIRE(vocabs.entities.name(1) == "bob");
  REQUIRE(vocabs.relations.find("visits") == 1);
  REQUIRE(facts[0] == Quadruple{0, 0, 1, 0});
  REQUIRE(facts[2] == Quadruple{0, 1, 3, 1});
}

TEST_CASE("parsing skips blank lines and trims carriage returns") {
  Vocabs vocabs;
  const auto facts = parse("\na\tr\tb\t5\r\n\n", vocabs);
  REQUIRE(facts.size() == 1);
  REQUIRE(vocabs.timestamps.text(0) == "5");
}

TEST_CASE("malformed lines report their line number") {
  Vocabs vocabs;
  std::istringstream in("a\tr\tb\t1\na\tr\tb\n");
  try {
    parse_quadruple_file(in, vocabs);
    FAIL("expected MalformedLine");
  } catch (const MalformedLine& e) {
    REQUIRE(e.line_no == 2);
  }
  Vocabs v2;
  std::istringstream in2("a\tr\tb\t1\na\tr\tb\tnot-a-date\n");
  try {
    parse_quadruple_file(in2, v2);
    FAIL("expected BadTimestamp");
  } catch (const BadTimestamp& e) {
    REQUIRE(e.line_no == 2);
  }
}

TEST_CASE("timestamp keys order calendar dates and bare integers") {
  // Oracle: 2020-01-01 is 18262 days after 1970-01-01 (50 years including
  // 13 leap days minus the skipped 1900-rule... computed independently:
  // 365*50 + 12 = 18262).
  int64_t key = 0;
  REQUIRE(timestamp_key("2020-01-01", key));
  REQUIRE(key == 18262);
  REQUIRE(timestamp_key("1970-01-01", key));
  REQUIRE(key == 0);
  REQUIRE(timestamp_key("1969-12-31", key));
  REQUIRE(key == -1);
  REQUIRE(timestamp_key("2014-02-07", key));
  int64_t key2 = 0;
  REQUIRE(timestamp_key("2014-02-08", key2));
  REQUIRE(key2 == key + 1);
  REQUIRE(timestamp_key("42", key));
  REQUIRE(key == 42);
  REQUIRE_FALSE(timestamp_key("2014-13-01", key));
  REQUIRE_FALSE(timestamp_key("yesterday", key));
}

TEST_CASE("descriptions attach by name and ignore unknown entities") {
  Vocabs vocabs;
  parse("alice\tknows\tbob\t1\n", vocabs);
  std::istringstream in("alice\ta researcher\nzed\tnever seen\nbob\t\n");
  REQUIRE(load_descriptions(in, vocabs) == 2);
  REQUIRE(vocabs.descriptions.description(0) == "a researcher");
  REQUIRE(vocabs.descriptions.description(1).empty());
  REQUIRE_THROWS_AS(vocabs.descriptions.description(99), UnknownEntity);
}

TEST_CASE("history index is sorted by timestamp key, not id order") {
  Vocabs vocabs;
  // Timestamps arrive out of chronological order, so id order != time order.
  const auto facts = parse(
      "a\tr\tx\t2020-05-01\n"
      "a\tr\ty\t2020-01-01\n"
      "a\tr\tz\t2020-03-01\n",
      vocabs);
  const TemporalKG kg = build_indices(facts, vocabs);
  const auto& hist = kg.history_index.at({0, 0});
  REQUIRE(hist.size() == 3);
  REQUIRE(vocabs.entities.name(hist[0].first) == "y");
  REQUIRE(vocabs.entities.name(hist[1].first) == "z");
  REQUIRE(vocabs.entities.name(hist[2].first) == "x");
}

TEST_CASE("filter index groups gold objects by (s,p,t)") {
  Vocabs vocabs;
  const auto facts = parse(
      "a\tr\tx\t1\n"
      "a\tr\ty\t1\n"
      "a\tr\tx\t2\n",
      vocabs);
  const TemporalKG kg = build_indices(facts, vocabs);
  const auto& at1 = kg.filter_index.at({0, 0, vocabs.timestamps.find("1")});
  REQUIRE(at1.size() == 2);
  REQUIRE(kg.filter_index.at({0, 0, vocabs.timestamps.find("2")}).size() == 1);
}

TEST_CASE("inverse augmentation doubles facts and is involutive on ids") {
  Vocabs vocabs;
  const auto facts = parse(
      "a\tknows\tb\t1\n"
      "b\tvisits\tc\t2\n",
      vocabs);
  const auto aug = add_inverse_relations(facts, vocabs);
  REQUIRE(aug.size() == 4);
  REQUIRE(vocabs.relations.size() == 4);
  REQUIRE(vocabs.base_relation_count == 2);
  REQUIRE(vocabs.relations.name(2) == "inverse knows");
  REQUIRE(vocabs.relations.name(3) == "inverse visits");
  REQUIRE(vocabs.inverse_of(0) == 2);
  REQUIRE(vocabs.inverse_of(2) == 0);
  REQUIRE(vocabs.is_inverse(3));
  REQUIRE_FALSE(vocabs.is_inverse(1));
  // (s,p,o,t) gains (o, p+base, s, t).
  REQUIRE(aug[2] == Quadruple{facts[0].o, 2, facts[0].s, facts[0].t});
  REQUIRE_THROWS_AS(add_inverse_relations(aug, vocabs), InverseAlreadyApplied);
}

TEST_CASE("inverse augmentation refuses vocabularies already holding inverses") {
  Vocabs vocabs;
  const auto facts = parse("a\tinverse knows\tb\t1\n", vocabs);
  REQUIRE_THROWS_AS(add_inverse_relations(facts, vocabs), InverseAlreadyApplied);
}

TEST_CASE("strict extrapolation split rejects temporal overlap") {
  Vocabs vocabs;
  const auto facts = parse(
      "a\tr\tb\t1\n"
      "a\tr\tc\t2\n"
      "a\tr\td\t3\n"
      "a\tr\te\t3\n",
      vocabs);
  REQUIRE_NOTHROW(make_split({facts[0]}, {facts[1]}, {facts[2]}, vocabs, true));
  REQUIRE_THROWS_AS(make_split({facts[0], facts[1]}, {facts[1]}, {facts[2]}, vocabs, true),
                    SplitViolation);
  REQUIRE_THROWS_AS(make_split({facts[0]}, {facts[2]}, {facts[3]}, vocabs, true),
                    SplitViolation);
  // Non-strict mode accepts the same overlap.
  REQUIRE_NOTHROW(make_split({facts[0], facts[1]}, {facts[1]}, {facts[2]}, vocabs, false));
}

TEST_CASE("split records timestamp boundaries") {
  Vocabs vocabs;
  const auto facts = parse(
      "a\tr\tb\t1\n"
      "a\tr\tc\t5\n"
      "a\tr\td\t9\n",
      vocabs);
  const DatasetSplit split = make_split({facts[0]}, {facts[1]}, {facts[2]}, vocabs, true);
  REQUIRE(vocabs.timestamps.key(split.t0) == 1);
  REQUIRE(vocabs.timestamps.key(split.t1) == 5);
  REQUIRE(vocabs.timestamps.key(split.t2) == 9);
  REQUIRE(vocabs.timestamps.key(split.t3) == 9);
}

TEST_CASE("inductive split matches a brute-force oracle") {
  Vocabs vocabs;
  // Entity "u" is unseen with 5 facts at times 1..5; "v" has 3 facts.
  const auto facts = parse(
      "u\tr\ta\t1\n"
      "u\tr\tb\t2\n"
      "a\tr\tb\t2\n"
      "u\tr\tc\t3\n"
      "b\tr\tv\t3\n"
      "u\tr\ta\t4\n"
      "u\tr\td\t5\n"
      "v\tr\ta\t6\n"
      "c\tr\td\t7\n"
      "v\tr\tb\t8\n",
      vocabs);
  const EntityId u = vocabs.entities.find("u");
  const EntityId v = vocabs.entities.find("v");
  const auto split = build_inductive_split(facts, {u, v}, 2, vocabs);

  // Background: facts touching neither u nor v.
  REQUIRE(split.background.facts.size() == 2);
  for (const Quadruple& q : split.background.facts) {
    REQUIRE(q.s != u);
    REQUIRE(q.o != u);
    REQUIRE(q.s != v);
    REQUIRE(q.o != v);
  }
  // Support: the K=2 earliest facts per unseen entity.
  REQUIRE(split.support.at(u).size() == 2);
  REQUIRE(split.support.at(u)[0].t == vocabs.timestamps.find("1"));
  REQUIRE(split.support.at(u)[1].t == vocabs.timestamps.find("2"));
  REQUIRE(split.support.at(v).size() == 2);
  // Query pool: u's remaining facts (t=3,4,5) plus v's remaining fact (t=8).
  const size_t pool = split.query_train.size() + split.query_valid.size() +
                      split.query_test.size();
  REQUIRE(pool == 4);
  REQUIRE(split.query_train.size() == 3);  // floor(4*0.8)
  REQUIRE(split.query_valid.size() == 0);  // floor(4*0.1)
  REQUIRE(split.query_test.size() == 1);
  // Queries sorted by time; none of them is a support fact.
  int64_t prev = INT64_MIN;
  for (const auto* qs : {&split.query_train, &split.query_valid, &split.query_test})
    for (const Quadruple& q : *qs) {
      REQUIRE(vocabs.timestamps.key(q.t) >= prev);
      prev = vocabs.timestamps.key(q.t);
      for (const auto& [e, sup] : split.support)
        for (const Quadruple& s : sup) REQUIRE(!(q == s));
    }
}

TEST_CASE("inductive split rejects entities with too few facts") {
  Vocabs vocabs;
  const auto facts = parse(
      "u\tr\ta\t1\n"
      "u\tr\tb\t2\n",
      vocabs);
  const EntityId u = vocabs.entities.find("u");
  REQUIRE_NOTHROW(build_inductive_split(facts, {u}, 1, vocabs));
  REQUIRE_THROWS_AS(build_inductive_split(facts, {u}, 2, vocabs), InsufficientFacts);
  REQUIRE_THROWS_AS(build_inductive_split(facts, {u}, -1, vocabs), std::invalid_argument);
}

TEST_CASE("unseen-entity sampling is deterministic and eligibility-filtered") {
  Vocabs vocabs;
  const auto facts = parse(
      "a\tr\tb\t1\n"
      "a\tr\tc\t2\n"
      "a\tr\tb\t3\n"
      "b\tr\tc\t4\n"
      "d\tr\ta\t5\n",
      vocabs);
  // fact counts: a=4, b=3, c=2, d=1. K=2 needs >=3 facts -> {a, b} eligible.
  const auto u1 = sample_unseen_entities(facts, vocabs, 0.5, 2, 7);
  const auto u2 = sample_unseen_entities(facts, vocabs, 0.5, 2, 7);
  REQUIRE(u1 == u2);
  REQUIRE(u1.size() == 2);
  for (EntityId e : u1)
    REQUIRE((vocabs.entities.name(e) == "a" || vocabs.entities.name(e) == "b"));
  const auto u3 = sample_unseen_entities(facts, vocabs, 1.0, 3, 7);
  REQUIRE(u3.size() == 1);  // only "a" has >= 4 facts
  REQUIRE(vocabs.entities.name(u3[0]) == "a");
}
