#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "tkgr/model.hpp"

namespace tkgr {

struct EmptyResults : std::runtime_error {
  EmptyResults() : std::runtime_error("compute_metrics: no ranking results") {}
};

struct ProtocolMismatch : std::runtime_error {
  explicit ProtocolMismatch(const std::string& what) : std::runtime_error(what) {}
};

/// Row i = L2-normalized candidate-tower embedding of entity i.
struct CandidateMatrix {
  Tensor mat;
  std::string fingerprint;
};

inline CandidateMatrix embed_all_candidates(DualEncoderModel& model, const Vocabs& vocabs) {
  CandidateMatrix cm;
  cm.mat = Tensor(vocabs.entities.size(), model.cfg.encoder.width);
  for (EntityId e = 0; e < vocabs.entities.size(); ++e) {
    const std::string text = verbalize_candidate(e, vocabs, model.cfg.verbalize).text;
    const Tensor row = model.embed_text(text, Tower::candidate);
    for (int j = 0; j < cm.mat.cols(); ++j) cm.mat.at(e, j) = row.at(0, j);
  }
  cm.fingerprint = std::to_string(vocabs.entities.size()) + "x" +
                   std::to_string(model.cfg.encoder.width);
  return cm;
}

enum class RankMode { raw, time_aware };

struct RankingResult {
  Quadruple query;
  EntityId gold;
  int unfiltered_rank = 0;
  int filtered_rank = 0;
  std::vector<EntityId> top10;
  bool head_direction = false;
};

/// Scores all candidates against a normalized query embedding. In time_aware
/// mode, alternative gold objects sharing (s,p,t) are pushed to -inf before
/// ranking; the query's own gold is never filtered. Rank = 1 + count of
/// strictly greater scores (ties never penalize the gold).
inline RankingResult rank_query(const Tensor& h_q, const Quadruple& query,
                                const CandidateMatrix& matrix, const TemporalKG& filter_kg,
                                RankMode mode) {
  const int n = matrix.mat.rows();
  if (query.o < 0 || query.o >= n) throw UnknownEntity("gold entity outside candidate matrix");
  std::vector<double> scores(n);
  for (int e = 0; e < n; ++e) {
    double acc = 0.0;
    for (int j = 0; j < matrix.mat.cols(); ++j) acc += h_q.at(0, j) * matrix.mat.at(e, j);
    scores[e] = acc;
  }
  const double gold_score = scores[query.o];
  int unfiltered = 1;
  for (int e = 0; e < n; ++e)
    if (scores[e] > gold_score) ++unfiltered;

  if (mode == RankMode::time_aware) {
    auto it = filter_kg.filter_index.find({query.s, query.p, query.t});
    if (it != filter_kg.filter_index.end())
      for (EntityId alt : it->second)
        if (alt != query.o) scores[alt] = -std::numeric_limits<double>::infinity();
  }
  int filtered = 1;
  for (int e = 0; e < n; ++e)
    if (scores[e] > gold_score) ++filtered;

  RankingResult res;
  res.query = query;
  res.gold = query.o;
  res.unfiltered_rank = unfiltered;
  res.filtered_rank = mode == RankMode::time_aware ? filtered : unfiltered;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  for (int i = 0; i < std::min(n, 10); ++i) res.top10.push_back(order[i]);
  return res;
}

struct DirectionMetrics {
  double mrr = 0.0, hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;
  int count = 0;
};

struct MetricsReport {
  double mrr = 0.0, hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;
  int query_count = 0;
  DirectionMetrics head, tail;

  void print(std::ostream& out) const {
    char buf[64];
    auto line = [&](const char* k, double v) {
      std::snprintf(buf, sizeof(buf), "%s\t%.6f\n", k, v);
      out << buf;
    };
    line("MRR", mrr);
    line("Hits@1", hits1);
    line("Hits@3", hits3);
    line("Hits@10", hits10);
    out << "queries\t" << query_count << "\n";
  }
};

/// MRR = mean(1/filtered rank); Hits@N = fraction with filtered rank <= N.
/// Overall numbers average the head- and tail-direction query sets; with a
/// single direction present they equal that direction's numbers.
inline MetricsReport compute_metrics(const std::vector<RankingResult>& results) {
  if (results.empty()) throw EmptyResults();
  MetricsReport rep;
  auto accumulate = [](DirectionMetrics& m, const RankingResult& r) {
    m.mrr += 1.0 / r.filtered_rank;
    m.hits1 += r.filtered_rank <= 1 ? 1.0 : 0.0;
    m.hits3 += r.filtered_rank <= 3 ? 1.0 : 0.0;
    m.hits10 += r.filtered_rank <= 10 ? 1.0 : 0.0;
    ++m.count;
  };
  for (const RankingResult& r : results) accumulate(r.head_direction ? rep.head : rep.tail, r);
  auto finish = [](DirectionMetrics& m) {
    if (m.count == 0) return;
    m.mrr /= m.count;
    m.hits1 /= m.count;
    m.hits3 /= m.count;
    m.hits10 /= m.count;
  };
  finish(rep.head);
  finish(rep.tail);
  rep.query_count = rep.head.count + rep.tail.count;
  const int dirs = (rep.head.count > 0) + (rep.tail.count > 0);
  rep.mrr = (rep.head.mrr + rep.tail.mrr) / dirs;
  rep.hits1 = (rep.head.hits1 + rep.tail.hits1) / dirs;
  rep.hits3 = (rep.head.hits3 + rep.tail.hits3) / dirs;
  rep.hits10 = (rep.head.hits10 + rep.tail.hits10) / dirs;
  return rep;
}

struct EvalOptions {
  RankMode mode = RankMode::time_aware;
  bool both_directions = true;  // also rank (o, p^-1, ?, t) when inverses exist
};

/// Ranks every fact's tail (and, via inverse relations, head) against the
/// candidate matrix, drawing history from history_kg and filtering against
/// filter_kg.
inline std::vector<RankingResult> rank_split(DualEncoderModel& model,
                                             const std::vector<Quadruple>& facts,
                                             const TemporalKG& history_kg,
                                             const TemporalKG& filter_kg, const Vocabs& vocabs,
                                             const CandidateMatrix& matrix,
                                             const EvalOptions& opt) {
  std::vector<RankingResult> results;
  auto run = [&](const Quadruple& q, bool head_dir) {
    const HistoryContext hist =
        retrieve_history(q.s, q.p, q.t, q.o, history_kg, vocabs, model.cfg.history);
    const std::string text =
        verbalize_query(q.s, q.p, q.t, hist, vocabs, model.cfg.verbalize).text;
    const Tensor h_q = model.embed_text(text, Tower::query);
    RankingResult r = rank_query(h_q, q, matrix, filter_kg, opt.mode);
    r.head_direction = head_dir;
    results.push_back(std::move(r));
  };
  for (const Quadruple& q : facts) {
    run(q, false);
    if (opt.both_directions && vocabs.has_inverses())
      run({q.o, vocabs.inverse_of(q.p), q.s, q.t}, true);
  }
  return results;
}

enum class Protocol { transductive, inductive_zero_shot, inductive_k_shot };

/// Transductive: ranks over all entities with history from the training
/// graph. Inductive: every query must contain an unseen entity; history
/// comes from the background graph, plus support facts in k-shot mode.
inline MetricsReport evaluate_protocol(DualEncoderModel& model,
                                       const std::vector<Quadruple>& queries,
                                       const TemporalKG& history_kg,
                                       const TemporalKG& filter_kg, const Vocabs& vocabs,
                                       Protocol protocol,
                                       const std::set<EntityId>* unseen = nullptr,
                                       const EvalOptions& opt = {}) {
  if (protocol != Protocol::transductive) {
    if (!unseen) throw ProtocolMismatch("inductive evaluation requires the unseen-entity set");
    for (const Quadruple& q : queries)
      if (!unseen->count(q.s) && !unseen->count(q.o))
        throw ProtocolMismatch("inductive query contains no unseen entity");
  }
  const CandidateMatrix matrix = embed_all_candidates(model, vocabs);
  return compute_metrics(rank_split(model, queries, history_kg, filter_kg, vocabs, matrix, opt));
}

}  // namespace tkgr
