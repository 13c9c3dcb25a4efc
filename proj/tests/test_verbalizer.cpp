#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <sstream>

#include "tkgr/tokenizer.hpp"
#include "tkgr/verbalize.hpp"

using namespace tkgr;

namespace {

Vocabs make_vocabs(std::vector<Quadruple>& facts) {
  Vocabs vocabs;
  std::istringstream in(
      "germany\tnegotiate\tfrance\t2014-01-05\n"
      "germany\tnegotiate\titaly\t2014-01-20\n"
      "germany\tnegotiate\tspain\t2014-02-01\n"
      "germany\tnegotiate\tfrance\t2014-02-07\n"
      "germany\tvisit\tspain\t2014-02-03\n");
  facts = parse_quadruple_file(in, vocabs);
  std::istringstream desc(
      "germany\ta federal european republic\n"
      "france\ta republic in western europe\n"
      "italy\ta southern european country\n"
      "spain\ta kingdom on the iberian peninsula\n");
  load_descriptions(desc, vocabs);
  return vocabs;
}

}  // namespace

TEST_CASE("timestamp lexicalization spells out months") {
  REQUIRE(lexicalize_timestamp_text("2014-02-07") == "2014 february 07");
  REQUIRE(lexicalize_timestamp_text("2020-12-31") == "2020 december 31");
  REQUIRE(lexicalize_timestamp_text("1995") == "1995");
  REQUIRE(lexicalize_timestamp_text("17") == "17");
}

TEST_CASE("entity descriptions are budgeted but never lose the name") {
  std::vector<Quadruple> facts;
  Vocabs vocabs = make_vocabs(facts);
  const EntityId germany = vocabs.entities.find("germany");
  REQUIRE(entity_description(germany, vocabs, 50) ==
          "germany, a federal european republic");
  REQUIRE(entity_description(germany, vocabs, 2) == "germany, a");
  REQUIRE(entity_description(germany, vocabs, 0) == "germany,");
  REQUIRE_THROWS_AS(entity_description(999, vocabs, 10), UnknownEntity);
}

TEST_CASE("history retrieval matches the brute-force definition") {
  // Oracle: for query (germany, negotiate, ?, 2014-02-07) with gold=france,
  // eligible facts are those with the same (s,p), t' <= t, object != france:
  // italy@2014-01-20 and spain@2014-02-01. france@2014-01-05 is excluded as
  // the gold object; the visit fact has a different relation.
  std::vector<Quadruple> facts;
  Vocabs vocabs = make_vocabs(facts);
  const Quadruple q = facts[3];
  const TemporalKG kg = build_indices(facts, vocabs);

  HistoryConfig cfg;
  cfg.order = HistoryOrder::ascending;
  auto ctx = retrieve_history(q.s, q.p, q.t, q.o, kg, vocabs, cfg);

  std::vector<std::string> got;
  for (const auto& item : ctx.items) got.push_back(vocabs.entities.name(item.o));
  REQUIRE(got == std::vector<std::string>{"italy", "spain"});

  cfg.order = HistoryOrder::descending;
  ctx = retrieve_history(q.s, q.p, q.t, q.o, kg, vocabs, cfg);
  got.clear();
  for (const auto& item : ctx.items) got.push_back(vocabs.entities.name(item.o));
  REQUIRE(got == std::vector<std::string>{"spain", "italy"});
}

TEST_CASE("history never leaks future facts and honors strict_less") {
  std::vector<Quadruple> facts;
  Vocabs vocabs = make_vocabs(facts);
  const TemporalKG kg = build_indices(facts, vocabs);
  const Quadruple q = facts[1];  // germany negotiate italy @ 2014-01-20

  HistoryConfig cfg;
  auto ctx = retrieve_history(q.s, q.p, q.t, q.o, kg, vocabs, cfg);
  const int64_t t_key = vocabs.timestamps.key(q.t);
  for (const auto& item : ctx.items) {
    REQUIRE(vocabs.timestamps.key(item.t) <= t_key);
    REQUIRE(item.o != q.o);  // gold object absent
  }
  // Only france@2014-01-05 qualifies (same day would qualify under <=).
  REQUIRE(ctx.items.size() == 1);

  // strict_less removes same-timestamp facts.
  Vocabs v2;
  std::istringstream in("a\tr\tx\t5\na\tr\ty\t5\n");
  auto f2 = parse_quadruple_file(in, v2);
  const TemporalKG kg2 = build_indices(f2, v2);
  HistoryConfig strict;
  strict.strict_less = true;
  REQUIRE(retrieve_history(0, 0, f2[0].t, f2[0].o, kg2, v2, strict).items.empty());
  HistoryConfig loose;
  REQUIRE(retrieve_history(0, 0, f2[0].t, f2[0].o, kg2, v2, loose).items.size() == 1);
}

TEST_CASE("history truncation keeps the most recent items") {
  Vocabs vocabs;
  std::ostringstream data;
  for (int t = 1; t <= 8; ++t) data << "s\tr\to" << t << "\t" << t << "\n";
  data << "s\tr\tgold\t9\n";
  std::istringstream in(data.str());
  auto facts = parse_quadruple_file(in, vocabs);
  const TemporalKG kg = build_indices(facts, vocabs);

  HistoryConfig cfg;
  cfg.max_items = 3;
  cfg.order = HistoryOrder::ascending;
  const Quadruple q = facts.back();
  auto ctx = retrieve_history(q.s, q.p, q.t, q.o, kg, vocabs, cfg);
  std::vector<std::string> got;
  for (const auto& item : ctx.items) got.push_back(vocabs.entities.name(item.o));
  REQUIRE(got == std::vector<std::string>{"o6", "o7", "o8"});
}

TEST_CASE("random history order is deterministic per seed") {
  Vocabs vocabs;
  std::ostringstream data;
  for (int t = 1; t <= 8; ++t) data << "s\tr\to" << t << "\t" << t << "\n";
  std::istringstream in(data.str());
  auto facts = parse_quadruple_file(in, vocabs);
  const TemporalKG kg = build_indices(facts, vocabs);
  HistoryConfig cfg;
  cfg.order = HistoryOrder::random_order;
  cfg.seed = 123;
  auto a = retrieve_history(0, 0, facts.back().t, std::nullopt, kg, vocabs, cfg);
  auto b = retrieve_history(0, 0, facts.back().t, std::nullopt, kg, vocabs, cfg);
  REQUIRE(a.items.size() == b.items.size());
  for (size_t i = 0; i < a.items.size(); ++i) REQUIRE(a.items[i].o == b.items[i].o);
  cfg.seed = 124;
  auto c = retrieve_history(0, 0, facts.back().t, std::nullopt, kg, vocabs, cfg);
  std::multiset<EntityId> sa, sc;
  for (const auto& it : a.items) sa.insert(it.o);
  for (const auto& it : c.items) sc.insert(it.o);
  REQUIRE(sa == sc);  // a permutation, not a different set
}

TEST_CASE("query prompt layout and spans") {
  std::vector<Quadruple> facts;
  Vocabs vocabs = make_vocabs(facts);
  const TemporalKG kg = build_indices(facts, vocabs);
  const Quadruple q = facts[3];
  HistoryConfig hcfg;
  hcfg.order = HistoryOrder::descending;
  auto hist = retrieve_history(q.s, q.p, q.t, q.o, kg, vocabs, hcfg);
  VerbalizeOptions opt;
  const PromptText prompt = verbalize_query(q.s, q.p, q.t, hist, vocabs, opt);

  REQUIRE(prompt.text ==
          "<cls> 2014 february 07 | germany, a federal european republic | negotiate <sep> "
          "2014 february 01 negotiate spain, a kingdom on the iberian peninsula, "
          "2014 january 20 negotiate italy, a southern european country <sep>");
  auto span_text = [&](PromptText::Span sp) { return prompt.text.substr(sp.begin, sp.len); };
  REQUIRE(span_text(prompt.time) == "2014 february 07");
  REQUIRE(span_text(prompt.subject) == "germany, a federal european republic");
  REQUIRE(span_text(prompt.relation) == "negotiate");
  REQUIRE(span_text(prompt.history).find("spain") != std::string::npos);
  // The gold object name never appears in the history segment.
  REQUIRE(span_text(prompt.history).find("france") == std::string::npos);
}

TEST_CASE("prompt options drop timestamps or descriptions") {
  std::vector<Quadruple> facts;
  Vocabs vocabs = make_vocabs(facts);
  const TemporalKG kg = build_indices(facts, vocabs);
  const Quadruple q = facts[3];
  HistoryConfig hcfg;
  auto hist = retrieve_history(q.s, q.p, q.t, q.o, kg, vocabs, hcfg);

  VerbalizeOptions opt;
  opt.include_timestamp = false;
  auto prompt = verbalize_query(q.s, q.p, q.t, hist, vocabs, opt);
  REQUIRE(prompt.text.find("february") == std::string::npos);
  REQUIRE(prompt.time.len == 0);

  VerbalizeOptions bare;
  bare.include_description = false;
  prompt = verbalize_query(q.s, q.p, q.t, hist, vocabs, bare);
  REQUIRE(prompt.text.find("republic") == std::string::npos);
  REQUIRE(prompt.text.find("germany |") != std::string::npos);

  hist.config.form = HistoryForm::entities;
  prompt = verbalize_query(q.s, q.p, q.t, hist, vocabs, bare);
  // entities form: history items carry no relation or timestamp text.
  const std::string h = prompt.text.substr(prompt.history.begin, prompt.history.len);
  REQUIRE(h == "spain, italy");
}

TEST_CASE("token-budget truncation preserves the head and re-terminates") {
  std::vector<Quadruple> facts;
  Vocabs vocabs = make_vocabs(facts);
  const TemporalKG kg = build_indices(facts, vocabs);
  const Quadruple q = facts[3];
  HistoryConfig hcfg;
  auto hist = retrieve_history(q.s, q.p, q.t, q.o, kg, vocabs, hcfg);
  VerbalizeOptions opt;
  opt.total_budget = 18;
  const PromptText prompt = verbalize_query(q.s, q.p, q.t, hist, vocabs, opt);

  std::istringstream in(prompt.text);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  REQUIRE(words.size() <= 18);
  REQUIRE(words.back() == "<sep>");
  // Head segment (through the first <sep>) is intact.
  const std::string head =
      "<cls> 2014 february 07 | germany, a federal european republic | negotiate <sep>";
  REQUIRE(prompt.text.rfind(head, 0) == 0);
  // Spans remain inside the truncated text.
  for (auto sp : {prompt.time, prompt.subject, prompt.relation, prompt.history})
    REQUIRE(sp.begin + sp.len <= prompt.text.size());
}

TEST_CASE("candidate prompt is timestamp-free") {
  std::vector<Quadruple> facts;
  Vocabs vocabs = make_vocabs(facts);
  VerbalizeOptions opt;
  const PromptText c =
      verbalize_candidate(vocabs.entities.find("france"), vocabs, opt);
  REQUIRE(c.text == "<cls> france, a republic in western europe <sep>");
  REQUIRE(c.text.find("2014") == std::string::npos);
}

TEST_CASE("tokenizer lowercases, splits punctuation, keeps specials atomic") {
  auto toks = Tokenizer::basic_tokens("<cls> Germany, isn't <sep>");
  REQUIRE(toks == std::vector<std::string>{"<cls>", "germany", ",", "isn't", "<sep>"});
  REQUIRE(Tokenizer::basic_tokens("<foo> x") ==
          std::vector<std::string>{"<", "foo", ">", "x"});
}

TEST_CASE("tokenization is deterministic with unk fallback and sep-kept truncation") {
  Tokenizer tok;
  tok.add_text("germany negotiates with france");
  const auto a = tok.tokenize("<cls> germany NEGOTIATES paris <sep>", 0);
  const auto b = tok.tokenize("<cls> germany NEGOTIATES paris <sep>", 0);
  REQUIRE(a == b);
  REQUIRE(a[0] == Tokenizer::kCls);
  REQUIRE(a[3] == Tokenizer::kUnk);  // "paris" unseen
  REQUIRE(a.back() == Tokenizer::kSep);
  const auto t = tok.tokenize("<cls> germany negotiates with france <sep>", 4);
  REQUIRE(t.size() == 4);
  REQUIRE(t.back() == Tokenizer::kSep);
  REQUIRE(tok.tokenize("", 0) == std::vector<int>{Tokenizer::kUnk});
}

TEST_CASE("tokenizer vocabulary round-trips through save/load") {
  Tokenizer tok;
  tok.add_text("alpha beta gamma");
  std::ostringstream out;
  tok.save(out);
  std::istringstream in(out.str());
  Tokenizer back = Tokenizer::load(in);
  REQUIRE(back.size() == tok.size());
  REQUIRE(back.tokenize("beta gamma", 0) == tok.tokenize("beta gamma", 0));
  std::istringstream bad("alpha\n<sep>\n<unk>\n<pad>\n");
  REQUIRE_THROWS_AS(Tokenizer::load(bad), std::runtime_error);
}
