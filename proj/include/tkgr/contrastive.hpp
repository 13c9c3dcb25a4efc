#pragma once

#include <cmath>
#include <deque>
#include <optional>
#include <vector>

#include "tkgr/autograd.hpp"
#include "tkgr/tkg.hpp"

namespace tkgr {

struct LossConfig {
  double tau_init = 0.05;  // learnable temperature, initial value
  double gamma = 0.02;     // additive margin on the gold term
  int pre_batch_depth = 2;
  bool use_self_negatives = true;
  double tau_min = 1e-3;
  int in_batch_cap = -1;  // max in-batch negatives per query; -1 = no cap
};

/// Cosine similarity of two row vectors. Throws ZeroVector on a zero input.
inline double cosine_score(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "cosine_score");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na < 1e-24 || nb < 1e-24) throw ZeroVector();
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Ring buffer of detached candidate embeddings from the most recent k
/// batches. Entries carry no gradient provenance.
class PreBatchQueue {
 public:
  struct Entry {
    Tensor embedding;  // 1 x d, L2-normalized
    EntityId entity;
  };

  explicit PreBatchQueue(int depth = 0) : depth_(depth) {}

  void push_batch(std::vector<Entry> batch) {
    if (depth_ <= 0) return;
    batches_.push_back(std::move(batch));
    while (batches_.size() > static_cast<size_t>(depth_)) batches_.pop_front();
  }

  std::vector<const Entry*> entries() const {
    std::vector<const Entry*> out;
    for (const auto& b : batches_)
      for (const Entry& e : b) out.push_back(&e);
    return out;
  }

  size_t size() const {
    size_t n = 0;
    for (const auto& b : batches_) n += b.size();
    return n;
  }
  int depth() const { return depth_; }

 private:
  int depth_;
  std::deque<std::vector<Entry>> batches_;
};

enum class NegativeFamily { in_batch, pre_batch, self };

struct NegativeRef {
  NegativeFamily family;
  int source_index;  // in_batch: batch position; pre_batch: flat queue index; self: own position
  EntityId entity;
};

using NegativeSet = std::vector<NegativeRef>;

/// Per-query negatives: other in-batch gold candidates, all queue entries,
/// and (optionally) the query's own head entity. Entries whose entity id
/// equals the query's gold id are dropped from every family.
inline std::vector<NegativeSet> assemble_negatives(const std::vector<EntityId>& gold_ids,
                                                   const std::vector<EntityId>& head_ids,
                                                   const PreBatchQueue& queue,
                                                   const LossConfig& cfg) {
  const auto queued = queue.entries();
  std::vector<NegativeSet> out(gold_ids.size());
  for (size_t i = 0; i < gold_ids.size(); ++i) {
    NegativeSet& negs = out[i];
    int in_batch = 0;
    for (size_t j = 0; j < gold_ids.size(); ++j) {
      if (j == i || gold_ids[j] == gold_ids[i]) continue;
      if (cfg.in_batch_cap >= 0 && in_batch >= cfg.in_batch_cap) break;
      negs.push_back({NegativeFamily::in_batch, static_cast<int>(j), gold_ids[j]});
      ++in_batch;
    }
    for (size_t q = 0; q < queued.size(); ++q) {
      if (queued[q]->entity == gold_ids[i]) continue;
      negs.push_back({NegativeFamily::pre_batch, static_cast<int>(q), queued[q]->entity});
    }
    if (cfg.use_self_negatives && i < head_ids.size() && head_ids[i] != gold_ids[i])
      negs.push_back({NegativeFamily::self, static_cast<int>(i), head_ids[i]});
  }
  return out;
}

/// tau = max(exp(log_tau), tau_min); trained in log space with a floor.
inline Graph::NodeId temperature_node(Graph& g, Parameter& log_tau, double tau_min) {
  return g.clamp_min(g.exp(g.leaf(log_tau)), tau_min);
}

/// Margin InfoNCE over a score matrix whose column 0 holds the gold score.
/// mask selects active columns per row (column 0 must be active everywhere).
/// Loss = mean over rows of  -log softmax_0( [(s0 - gamma)/tau, s_j/tau] ).
inline Graph::NodeId margin_info_nce(Graph& g, Graph::NodeId scores, Tensor mask,
                                     Graph::NodeId tau, double gamma) {
  const Tensor& S = g.value(scores);
  Tensor shift(S.rows(), S.cols());
  for (int i = 0; i < S.rows(); ++i) shift.at(i, 0) = -gamma;
  const auto adjusted = g.add(scores, g.constant(std::move(shift)));
  const auto logits = g.div_scalar(adjusted, tau);
  const auto lse = g.masked_logsumexp_rows(logits, std::move(mask));
  return g.mean_all(g.sub(lse, g.slice_cols(logits, 0, 1)));
}

/// Single-query form: gold is 1x1, negatives a 1xN row (or -1 for none).
inline Graph::NodeId info_nce_loss(Graph& g, Graph::NodeId gold_score,
                                   Graph::NodeId negative_scores, Graph::NodeId tau,
                                   double gamma) {
  const auto row = negative_scores >= 0 ? g.concat_cols({gold_score, negative_scores})
                                        : gold_score;
  Tensor mask(1, g.value(row).cols());
  mask.fill(1.0);
  return margin_info_nce(g, row, std::move(mask), tau, gamma);
}

/// Plain-arithmetic evaluation of the same loss, for tests and inspection.
inline double info_nce_value(double gold, const std::vector<double>& negs, double tau,
                             double gamma) {
  const double a0 = (gold - gamma) / tau;
  double mx = a0;
  for (double n : negs) mx = std::max(mx, n / tau);
  double sum = std::exp(a0 - mx);
  for (double n : negs) sum += std::exp(n / tau - mx);
  return mx + std::log(sum) - a0;
}

}  // namespace tkgr
