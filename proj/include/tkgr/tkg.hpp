#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <istream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace tkgr {

using EntityId = int;
using RelationId = int;
using TimestampId = int;

struct MalformedLine : std::runtime_error {
  explicit MalformedLine(int line_no)
      : std::runtime_error("line " + std::to_string(line_no) +
                           ": expected exactly 4 tab-separated fields"),
        line_no(line_no) {}
  int line_no;
};

struct BadTimestamp : std::runtime_error {
  BadTimestamp(int line_no, const std::string& text)
      : std::runtime_error("line " + std::to_string(line_no) + ": unparseable timestamp '" +
                           text + "'"),
        line_no(line_no) {}
  int line_no;
};

struct UnknownEntity : std::runtime_error {
  explicit UnknownEntity(const std::string& what) : std::runtime_error(what) {}
};

struct InsufficientFacts : std::runtime_error {
  InsufficientFacts(const std::string& name, size_t have, int need)
      : std::runtime_error("unseen entity '" + name + "' has " + std::to_string(have) +
                           " facts, needs at least " + std::to_string(need)) {}
};

struct InverseAlreadyApplied : std::runtime_error {
  InverseAlreadyApplied()
      : std::runtime_error("relation vocabulary already contains inverse relations") {}
};

struct Quadruple {
  EntityId s;
  RelationId p;
  EntityId o;
  TimestampId t;
  bool operator==(const Quadruple&) const = default;
};

/// Surface-form vocabulary with dense ids in first-seen order.
class Vocab {
 public:
  int add_or_get(const std::string& name) {
    auto it = index_.find(name);
    if (it != index_.end()) return it->second;
    names_.push_back(name);
    index_.emplace(name, static_cast<int>(names_.size()) - 1);
    return static_cast<int>(names_.size()) - 1;
  }
  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }
  const std::string& name(int id) const { return names_.at(id); }
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

namespace detail {
// Days since 1970-01-01 for a proleptic Gregorian date (Hinnant's algorithm).
inline int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

inline bool all_digits(const std::string& s) {
  if (s.empty()) return false;
  size_t i = (s[0] == '-') ? 1 : 0;
  if (i == s.size()) return false;
  for (; i < s.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
  return true;
}
}  // namespace detail

/// "yyyy-mm-dd" -> days since epoch; bare integer -> its value.
/// Returns false when the text parses as neither.
inline bool timestamp_key(const std::string& text, int64_t& key) {
  if (text.size() == 10 && text[4] == '-' && text[7] == '-') {
    const std::string ys = text.substr(0, 4), ms = text.substr(5, 2), ds = text.substr(8, 2);
    if (detail::all_digits(ys) && detail::all_digits(ms) && detail::all_digits(ds)) {
      const int y = std::stoi(ys), m = std::stoi(ms), d = std::stoi(ds);
      if (m < 1 || m > 12 || d < 1 || d > 31) return false;
      key = detail::days_from_civil(y, m, d);
      return true;
    }
    return false;
  }
  if (detail::all_digits(text)) {
    key = std::stoll(text);
    return true;
  }
  return false;
}

/// Timestamp vocabulary: dense ids plus a totally ordered integer key each.
class TimestampVocab {
 public:
  // Throws std::invalid_argument on unparseable text.
  int add_or_get(const std::string& text) {
    auto it = index_.find(text);
    if (it != index_.end()) return it->second;
    int64_t key = 0;
    if (!timestamp_key(text, key)) throw std::invalid_argument("bad timestamp: " + text);
    texts_.push_back(text);
    keys_.push_back(key);
    index_.emplace(text, static_cast<int>(texts_.size()) - 1);
    return static_cast<int>(texts_.size()) - 1;
  }
  int find(const std::string& text) const {
    auto it = index_.find(text);
    return it == index_.end() ? -1 : it->second;
  }
  const std::string& text(int id) const { return texts_.at(id); }
  int64_t key(int id) const { return keys_.at(id); }
  int size() const { return static_cast<int>(texts_.size()); }

 private:
  std::vector<std::string> texts_;
  std::vector<int64_t> keys_;
  std::unordered_map<std::string, int> index_;
};

/// Entity and relation names plus entity description texts.
class DescriptionStore {
 public:
  void sync(const Vocab& entities) {
    entity_desc_.resize(entities.size());
  }
  void set_description(EntityId e, const std::string& desc) {
    if (e < 0 || static_cast<size_t>(e) >= entity_desc_.size())
      throw UnknownEntity("entity id " + std::to_string(e) + " out of range");
    entity_desc_[e] = desc;
  }
  const std::string& description(EntityId e) const {
    if (e < 0 || static_cast<size_t>(e) >= entity_desc_.size())
      throw UnknownEntity("entity id " + std::to_string(e) + " out of range");
    return entity_desc_[e];
  }
  size_t size() const { return entity_desc_.size(); }

 private:
  std::vector<std::string> entity_desc_;
};

struct Vocabs {
  Vocab entities;
  Vocab relations;
  TimestampVocab timestamps;
  DescriptionStore descriptions;
  /// Relation count before inverse augmentation; -1 until inverses are added.
  int base_relation_count = -1;

  bool has_inverses() const { return base_relation_count >= 0; }
  RelationId inverse_of(RelationId p) const {
    return p < base_relation_count ? p + base_relation_count : p - base_relation_count;
  }
  bool is_inverse(RelationId p) const { return has_inverses() && p >= base_relation_count; }
};

/// Parses UTF-8 lines "subject<TAB>relation<TAB>object<TAB>timestamp",
/// extending vocabularies with unseen surface forms. Empty lines skipped.
inline std::vector<Quadruple> parse_quadruple_file(std::istream& in, Vocabs& vocabs) {
  std::vector<Quadruple> facts;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      const size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4) throw MalformedLine(line_no);
    int64_t key = 0;
    if (!timestamp_key(fields[3], key)) throw BadTimestamp(line_no, fields[3]);
    Quadruple q;
    q.s = vocabs.entities.add_or_get(fields[0]);
    q.p = vocabs.relations.add_or_get(fields[1]);
    q.o = vocabs.entities.add_or_get(fields[2]);
    q.t = vocabs.timestamps.add_or_get(fields[3]);
    facts.push_back(q);
  }
  vocabs.descriptions.sync(vocabs.entities);
  return facts;
}

/// Lines "entity-name<TAB>description"; names absent from the vocabulary are
/// ignored. Returns the number of descriptions attached.
inline int load_descriptions(std::istream& in, Vocabs& vocabs) {
  vocabs.descriptions.sync(vocabs.entities);
  std::string line;
  int attached = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    const std::string name = line.substr(0, tab);
    const std::string desc = tab == std::string::npos ? "" : line.substr(tab + 1);
    const int id = vocabs.entities.find(name);
    if (id >= 0) {
      vocabs.descriptions.set_description(id, desc);
      ++attached;
    }
  }
  return attached;
}

/// Fact store with (s,p) -> time-ascending history and (s,p,t) -> gold-object
/// filter indices. Immutable after construction.
struct TemporalKG {
  std::vector<Quadruple> facts;
  std::map<std::pair<EntityId, RelationId>, std::vector<std::pair<EntityId, TimestampId>>>
      history_index;
  std::map<std::tuple<EntityId, RelationId, TimestampId>, std::set<EntityId>> filter_index;
};

inline TemporalKG build_indices(std::vector<Quadruple> facts, const Vocabs& vocabs) {
  TemporalKG kg;
  kg.facts = std::move(facts);
  for (const Quadruple& q : kg.facts) {
    kg.history_index[{q.s, q.p}].emplace_back(q.o, q.t);
    kg.filter_index[{q.s, q.p, q.t}].insert(q.o);
  }
  for (auto& [sp, hist] : kg.history_index) {
    std::stable_sort(hist.begin(), hist.end(),
                     [&](const auto& a, const auto& b) {
                       return vocabs.timestamps.key(a.second) < vocabs.timestamps.key(b.second);
                     });
  }
  return kg;
}

/// Reciprocal-relation augmentation: every relation p gains a relation named
/// "inverse <name>" and every fact (s,p,o,t) gains (o,p^-1,s,t). Applying
/// twice throws InverseAlreadyApplied.
inline std::vector<Quadruple> add_inverse_relations(const std::vector<Quadruple>& facts,
                                                    Vocabs& vocabs) {
  if (vocabs.has_inverses()) throw InverseAlreadyApplied();
  for (const std::string& name : vocabs.relations.names())
    if (name.rfind("inverse ", 0) == 0) throw InverseAlreadyApplied();
  const int base = vocabs.relations.size();
  for (int p = 0; p < base; ++p)
    vocabs.relations.add_or_get("inverse " + vocabs.relations.name(p));
  vocabs.base_relation_count = base;
  std::vector<Quadruple> out;
  out.reserve(facts.size() * 2);
  out = facts;
  for (const Quadruple& q : facts) out.push_back({q.o, q.p + base, q.s, q.t});
  return out;
}

struct DatasetSplit {
  std::vector<Quadruple> train, valid, test;
  TimestampId t0 = -1, t1 = -1, t2 = -1, t3 = -1;  // split boundaries
};

struct SplitViolation : std::runtime_error {
  explicit SplitViolation(const std::string& what) : std::runtime_error(what) {}
};

/// Assembles a split and records its timestamp boundaries. With
/// strict_extrapolation, every train timestamp must precede every valid
/// timestamp, and likewise valid before test.
inline DatasetSplit make_split(std::vector<Quadruple> train, std::vector<Quadruple> valid,
                               std::vector<Quadruple> test, const Vocabs& vocabs,
                               bool strict_extrapolation = false) {
  DatasetSplit split;
  split.train = std::move(train);
  split.valid = std::move(valid);
  split.test = std::move(test);
  auto key = [&](TimestampId t) { return vocabs.timestamps.key(t); };
  auto minmax = [&](const std::vector<Quadruple>& v, TimestampId& lo, TimestampId& hi) {
    for (const Quadruple& q : v) {
      if (lo < 0 || key(q.t) < key(lo)) lo = q.t;
      if (hi < 0 || key(q.t) > key(hi)) hi = q.t;
    }
  };
  TimestampId train_hi = -1, valid_hi = -1;
  minmax(split.train, split.t0, train_hi);
  minmax(split.valid, split.t1, valid_hi);
  minmax(split.test, split.t2, split.t3);
  if (strict_extrapolation) {
    if (train_hi >= 0 && split.t1 >= 0 && key(train_hi) >= key(split.t1))
      throw SplitViolation("train timestamps overlap valid timestamps");
    if (valid_hi >= 0 && split.t2 >= 0 && key(valid_hi) >= key(split.t2))
      throw SplitViolation("valid timestamps overlap test timestamps");
  }
  return split;
}

struct InductiveSplit {
  TemporalKG background;
  std::set<EntityId> unseen_entities;
  std::map<EntityId, std::vector<Quadruple>> support;  // exactly K facts each
  std::vector<Quadruple> query_train, query_valid, query_test;
};

inline bool touches_any(const Quadruple& q, const std::set<EntityId>& ents) {
  return ents.count(q.s) > 0 || ents.count(q.o) > 0;
}

/// Out-of-graph split: background facts touch no unseen entity; each unseen
/// entity's K earliest facts form its support, the rest become queries split
/// by timestamp. Deterministic for a fixed unseen set.
inline InductiveSplit build_inductive_split(const std::vector<Quadruple>& all_facts,
                                            const std::vector<EntityId>& unseen, int K,
                                            const Vocabs& vocabs, double train_frac = 0.8,
                                            double valid_frac = 0.1) {
  if (K < 0) throw std::invalid_argument("shot count K must be >= 0");
  InductiveSplit split;
  split.unseen_entities.insert(unseen.begin(), unseen.end());

  std::vector<Quadruple> background_facts;
  std::map<EntityId, std::vector<Quadruple>> touching;
  std::vector<Quadruple> query_pool;
  for (const Quadruple& q : all_facts) {
    if (!touches_any(q, split.unseen_entities)) {
      background_facts.push_back(q);
      continue;
    }
    // Attribute the fact to its first unseen participant for support selection.
    const EntityId owner = split.unseen_entities.count(q.s) ? q.s : q.o;
    touching[owner].push_back(q);
  }
  for (EntityId e : unseen) {
    auto& facts = touching[e];
    if (facts.size() < static_cast<size_t>(K) + 1)
      throw InsufficientFacts(vocabs.entities.name(e), facts.size(), K + 1);
    std::stable_sort(facts.begin(), facts.end(), [&](const Quadruple& a, const Quadruple& b) {
      return vocabs.timestamps.key(a.t) < vocabs.timestamps.key(b.t);
    });
    split.support[e] = std::vector<Quadruple>(facts.begin(), facts.begin() + K);
    query_pool.insert(query_pool.end(), facts.begin() + K, facts.end());
  }
  std::stable_sort(query_pool.begin(), query_pool.end(),
                   [&](const Quadruple& a, const Quadruple& b) {
                     return vocabs.timestamps.key(a.t) < vocabs.timestamps.key(b.t);
                   });
  const size_t n = query_pool.size();
  const size_t n_train = static_cast<size_t>(n * train_frac);
  const size_t n_valid = static_cast<size_t>(n * valid_frac);
  split.query_train.assign(query_pool.begin(), query_pool.begin() + n_train);
  split.query_valid.assign(query_pool.begin() + n_train, query_pool.begin() + n_train + n_valid);
  split.query_test.assign(query_pool.begin() + n_train + n_valid, query_pool.end());
  split.background = build_indices(std::move(background_facts), vocabs);
  return split;
}

/// Samples the unseen-entity set for an OOG split among entities with at
/// least K+1 facts. Deterministic under seed.
inline std::vector<EntityId> sample_unseen_entities(const std::vector<Quadruple>& all_facts,
                                                    const Vocabs& vocabs, double fraction, int K,
                                                    uint64_t seed) {
  std::vector<size_t> fact_count(vocabs.entities.size(), 0);
  for (const Quadruple& q : all_facts) {
    ++fact_count[q.s];
    if (q.o != q.s) ++fact_count[q.o];
  }
  std::vector<EntityId> eligible;
  for (EntityId e = 0; e < vocabs.entities.size(); ++e)
    if (fact_count[e] >= static_cast<size_t>(K) + 1) eligible.push_back(e);
  std::mt19937_64 rng(seed);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  const size_t want = static_cast<size_t>(vocabs.entities.size() * fraction);
  eligible.resize(std::min(want, eligible.size()));
  std::sort(eligible.begin(), eligible.end());
  return eligible;
}

}  // namespace tkgr
