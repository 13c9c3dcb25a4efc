#pragma once

#include <array>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tkgr/tkg.hpp"

namespace tkgr {

enum class HistoryOrder { descending, ascending, random_order };
enum class HistoryForm { pairs, entities };

struct HistoryConfig {
  HistoryOrder order = HistoryOrder::descending;
  HistoryForm form = HistoryForm::pairs;
  int max_items = 10;
  bool strict_less = false;  // t' < t instead of t' <= t
  uint64_t seed = 0;         // random order only
};

struct HistoryItem {
  EntityId o;
  TimestampId t;
  RelationId p;
};

struct HistoryContext {
  std::vector<HistoryItem> items;
  HistoryConfig config;
};

inline const std::array<std::string, 12>& month_words() {
  static const std::array<std::string, 12> kMonths = {
      "january", "february", "march",     "april",   "may",      "june",
      "july",    "august",   "september", "october", "november", "december"};
  return kMonths;
}

/// "yyyy-mm-dd" -> "yyyy <month word> dd"; year-granularity text passes through.
inline std::string lexicalize_timestamp_text(const std::string& text) {
  int64_t key = 0;
  if (text.size() == 10 && text[4] == '-' && text[7] == '-' && timestamp_key(text, key)) {
    const int month = std::stoi(text.substr(5, 2));
    return text.substr(0, 4) + " " + month_words()[month - 1] + " " + text.substr(8, 2);
  }
  return text;
}

inline std::string lexicalize_timestamp(TimestampId t, const Vocabs& vocabs) {
  return lexicalize_timestamp_text(vocabs.timestamps.text(t));
}

namespace detail {
inline std::vector<std::string> whitespace_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

inline std::string join_words(const std::vector<std::string>& words, size_t count) {
  std::string out;
  for (size_t i = 0; i < std::min(count, words.size()); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}
}  // namespace detail

/// "name, description" truncated to `budget` whitespace tokens; the name is
/// never truncated below its first token. Empty description yields the name.
inline std::string entity_description(EntityId e, const Vocabs& vocabs, int budget) {
  if (e < 0 || e >= vocabs.entities.size())
    throw UnknownEntity("entity id " + std::to_string(e) + " not in vocabulary");
  const std::string& name = vocabs.entities.name(e);
  const std::string& desc =
      vocabs.descriptions.size() > static_cast<size_t>(e) ? vocabs.descriptions.description(e)
                                                          : std::string();
  const std::string full = desc.empty() ? name : name + ", " + desc;
  auto words = detail::whitespace_words(full);
  const size_t keep = std::max<size_t>(1, static_cast<size_t>(std::max(budget, 0)));
  if (words.size() <= keep) return full;
  return detail::join_words(words, keep);
}

/// All (s,p,~o,t') with t' <= t (or < t), ~o != gold, ordered and truncated
/// per config. Truncation always keeps the most recent items; ordering is
/// applied to the kept set.
inline HistoryContext retrieve_history(EntityId s, RelationId p, TimestampId t,
                                       std::optional<EntityId> gold_o, const TemporalKG& kg,
                                       const Vocabs& vocabs, const HistoryConfig& cfg) {
  HistoryContext ctx;
  ctx.config = cfg;
  auto it = kg.history_index.find({s, p});
  if (it == kg.history_index.end()) return ctx;
  const int64_t t_key = vocabs.timestamps.key(t);
  std::vector<HistoryItem> ascending;
  for (const auto& [o, tp] : it->second) {
    const int64_t k = vocabs.timestamps.key(tp);
    if (cfg.strict_less ? (k >= t_key) : (k > t_key)) continue;
    if (gold_o && o == *gold_o) continue;
    ascending.push_back({o, tp, p});
  }
  if (cfg.max_items >= 0 && ascending.size() > static_cast<size_t>(cfg.max_items))
    ascending.erase(ascending.begin(), ascending.end() - cfg.max_items);
  switch (cfg.order) {
    case HistoryOrder::ascending:
      ctx.items = std::move(ascending);
      break;
    case HistoryOrder::descending:
      ctx.items.assign(ascending.rbegin(), ascending.rend());
      break;
    case HistoryOrder::random_order: {
      ctx.items = std::move(ascending);
      std::mt19937_64 rng(cfg.seed);
      std::shuffle(ctx.items.begin(), ctx.items.end(), rng);
      break;
    }
  }
  return ctx;
}

/// Verbalized token-ready text with character spans for each segment.
struct PromptText {
  struct Span {
    size_t begin = 0;
    size_t len = 0;
  };
  std::string text;
  Span time, subject, relation, history;
};

struct VerbalizeOptions {
  int description_budget = 50;  // tokens per entity description
  int total_budget = 128;       // tokens for the whole query sequence
  bool include_timestamp = true;
  bool include_description = true;  // false: bare entity names
};

namespace detail {
inline std::string describe(EntityId e, const Vocabs& vocabs, const VerbalizeOptions& opt) {
  if (!opt.include_description) return vocabs.entities.name(e);
  return entity_description(e, vocabs, opt.description_budget);
}
}  // namespace detail

/// Query prompt: "<cls> L_t | D_s | D_p <sep> H <sep>". In pairs form each
/// history item renders as "L_t' D_p D_o"; in entities form as "D_o"; items
/// joined by ", ". Truncation to the total budget drops tokens from the end
/// but never touches the span up to the first <sep>, and re-terminates the
/// text with <sep>.
inline PromptText verbalize_query(EntityId s, RelationId p, TimestampId t,
                                  const HistoryContext& history, const Vocabs& vocabs,
                                  const VerbalizeOptions& opt) {
  PromptText out;
  std::string& text = out.text;
  text = "<cls> ";
  if (opt.include_timestamp) {
    const std::string lt = lexicalize_timestamp(t, vocabs);
    out.time = {text.size(), lt.size()};
    text += lt + " | ";
  } else {
    out.time = {text.size(), 0};
  }
  const std::string ds = detail::describe(s, vocabs, opt);
  out.subject = {text.size(), ds.size()};
  text += ds + " | ";
  const std::string& dp = vocabs.relations.name(p);
  out.relation = {text.size(), dp.size()};
  text += dp + " <sep> ";
  std::string h;
  for (size_t i = 0; i < history.items.size(); ++i) {
    if (i) h += ", ";
    const HistoryItem& item = history.items[i];
    if (history.config.form == HistoryForm::pairs) {
      if (opt.include_timestamp) h += lexicalize_timestamp(item.t, vocabs) + " ";
      h += vocabs.relations.name(item.p) + " ";
    }
    h += detail::describe(item.o, vocabs, opt);
  }
  out.history = {text.size(), h.size()};
  if (!h.empty()) text += h + " ";
  text += "<sep>";

  // Token-budget truncation from the end.
  const auto words = detail::whitespace_words(text);
  const size_t budget = static_cast<size_t>(std::max(opt.total_budget, 2));
  if (words.size() > budget) {
    // Never cut into the head span (through the first <sep>).
    size_t head = 0;
    while (head < words.size() && words[head] != "<sep>") ++head;
    ++head;  // include the first <sep>
    const size_t keep = std::max(head, budget - 1);
    std::string truncated = detail::join_words(words, keep) + " <sep>";
    const size_t cut = detail::join_words(words, keep).size();
    auto clamp = [cut](PromptText::Span sp) {
      if (sp.begin >= cut) return PromptText::Span{cut, 0};
      sp.len = std::min(sp.len, cut - sp.begin);
      return sp;
    };
    out.time = clamp(out.time);
    out.subject = clamp(out.subject);
    out.relation = clamp(out.relation);
    out.history = clamp(out.history);
    text = std::move(truncated);
  }
  return out;
}

/// Candidate prompt: "<cls> D_e <sep>". Timestamp-free by construction.
inline PromptText verbalize_candidate(EntityId e, const Vocabs& vocabs,
                                      const VerbalizeOptions& opt) {
  PromptText out;
  const std::string de = detail::describe(e, vocabs, opt);
  out.text = "<cls> ";
  out.subject = {out.text.size(), de.size()};
  out.text += de + " <sep>";
  return out;
}

}  // namespace tkgr
