#pragma once

#include <string>
#include <vector>

#include "tkgr/contrastive.hpp"
#include "tkgr/encoder.hpp"
#include "tkgr/tokenizer.hpp"
#include "tkgr/verbalize.hpp"

namespace tkgr {

struct ModelConfig {
  EncoderConfig encoder;
  VerbalizeOptions verbalize;
  HistoryConfig history;
  LossConfig loss;
};

/// Pseudo-Siamese pair: one shared backbone, two prefix banks, a learnable
/// temperature. The towers differ only in their prefixes.
struct DualEncoderModel {
  ModelConfig cfg;
  Tokenizer tokenizer;
  EncoderWeights weights;
  PrefixBank query_bank, candidate_bank;
  Parameter log_tau;

  static DualEncoderModel init(ModelConfig cfg, Tokenizer tokenizer, uint64_t seed) {
    DualEncoderModel m;
    m.cfg = cfg;
    m.tokenizer = std::move(tokenizer);
    m.weights = EncoderWeights::init(cfg.encoder, m.tokenizer.size(), seed);
    m.query_bank = PrefixBank::init(cfg.encoder, "query", seed + 1);
    m.candidate_bank = PrefixBank::init(cfg.encoder, "candidate", seed + 2);
    m.log_tau = Parameter("log_tau", Tensor::scalar(std::log(cfg.loss.tau_init)));
    return m;
  }

  std::vector<Parameter*> all_parameters() {
    std::vector<Parameter*> ps = weights.all();
    for (Parameter* p : query_bank.all()) ps.push_back(p);
    for (Parameter* p : candidate_bank.all()) ps.push_back(p);
    ps.push_back(&log_tau);
    return ps;
  }

  PrefixBank& bank(Tower tower) {
    return tower == Tower::query ? query_bank : candidate_bank;
  }

  /// Tokenize, encode, L2-normalize: 1 x d unit row on the graph.
  Graph::NodeId encode_text(Graph& g, const std::string& text, Tower tower) {
    const auto ids = tokenizer.tokenize(text, cfg.encoder.max_seq);
    return g.l2_normalize(encode(g, ids, weights, &bank(tower), cfg.encoder));
  }

  /// Forward-only embedding (no surviving tape).
  Tensor embed_text(const std::string& text, Tower tower) {
    Graph g;
    return g.value(encode_text(g, text, tower));
  }
};

/// One training example: verbalized query, gold candidate, and the query's
/// own head entity (the self-negative candidate).
struct BatchExample {
  Quadruple fact;
  std::string query_text;
  std::string gold_text;
  std::string head_text;
};

inline BatchExample make_example(const Quadruple& fact, const TemporalKG& history_kg,
                                 const Vocabs& vocabs, const ModelConfig& cfg,
                                 uint64_t history_seed = 0) {
  HistoryConfig hcfg = cfg.history;
  hcfg.seed = history_seed;
  const HistoryContext hist =
      retrieve_history(fact.s, fact.p, fact.t, fact.o, history_kg, vocabs, hcfg);
  BatchExample ex;
  ex.fact = fact;
  ex.query_text = verbalize_query(fact.s, fact.p, fact.t, hist, vocabs, cfg.verbalize).text;
  ex.gold_text = verbalize_candidate(fact.o, vocabs, cfg.verbalize).text;
  ex.head_text = verbalize_candidate(fact.s, vocabs, cfg.verbalize).text;
  return ex;
}

/// Contrastive loss over one batch. Column layout of the score matrix:
/// [gold | B in-batch | queue entries | self]. The mask silences the query's
/// own gold column and every gold-id collision. New detached candidate
/// embeddings are returned through out_entries for the queue push.
inline Graph::NodeId batch_loss(Graph& g, DualEncoderModel& model,
                                const std::vector<BatchExample>& batch,
                                const PreBatchQueue& queue,
                                std::vector<PreBatchQueue::Entry>* out_entries = nullptr) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  const int B = static_cast<int>(batch.size());
  const LossConfig& lc = model.cfg.loss;

  std::vector<Graph::NodeId> q_rows, c_rows, self_rows;
  std::vector<EntityId> gold_ids, head_ids;
  for (const BatchExample& ex : batch) {
    q_rows.push_back(model.encode_text(g, ex.query_text, Tower::query));
    c_rows.push_back(model.encode_text(g, ex.gold_text, Tower::candidate));
    if (lc.use_self_negatives)
      self_rows.push_back(model.encode_text(g, ex.head_text, Tower::candidate));
    gold_ids.push_back(ex.fact.o);
    head_ids.push_back(ex.fact.s);
  }
  const auto Q = g.concat_rows(q_rows);
  const auto C = g.concat_rows(c_rows);

  const auto negatives = assemble_negatives(gold_ids, head_ids, queue, lc);
  const auto queued = queue.entries();
  const int n_queue = static_cast<int>(queued.size());
  const int n_self = lc.use_self_negatives ? 1 : 0;

  std::vector<Graph::NodeId> cols;
  cols.push_back(g.rowwise_dot(Q, C));  // gold
  cols.push_back(g.matmul_nt(Q, C));    // in-batch
  if (n_queue > 0) {
    Tensor qm(n_queue, model.cfg.encoder.width);
    for (int r = 0; r < n_queue; ++r)
      for (int j = 0; j < qm.cols(); ++j) qm.at(r, j) = queued[r]->embedding.at(0, j);
    cols.push_back(g.matmul_nt(Q, g.constant(std::move(qm))));
  }
  if (n_self) cols.push_back(g.rowwise_dot(Q, g.concat_rows(self_rows)));
  const auto scores = g.concat_cols(cols);

  Tensor mask(B, 1 + B + n_queue + n_self);
  for (int i = 0; i < B; ++i) {
    mask.at(i, 0) = 1.0;
    for (const NegativeRef& ref : negatives[i]) {
      switch (ref.family) {
        case NegativeFamily::in_batch:
          mask.at(i, 1 + ref.source_index) = 1.0;
          break;
        case NegativeFamily::pre_batch:
          mask.at(i, 1 + B + ref.source_index) = 1.0;
          break;
        case NegativeFamily::self:
          mask.at(i, 1 + B + n_queue) = 1.0;
          break;
      }
    }
  }

  if (out_entries) {
    out_entries->clear();
    for (int i = 0; i < B; ++i) {
      PreBatchQueue::Entry e;
      e.embedding = g.value(c_rows[i]);  // detached copy
      e.entity = gold_ids[i];
      out_entries->push_back(std::move(e));
    }
  }

  const auto tau = temperature_node(g, model.log_tau, lc.tau_min);
  return margin_info_nce(g, scores, std::move(mask), tau, lc.gamma);
}

}  // namespace tkgr
