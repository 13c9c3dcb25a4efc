#pragma once

#include "tkgr/evaluator.hpp"
#include "tkgr/trainer.hpp"

namespace tkgr {

/// Few-shot out-of-graph evaluation. The unseen entities' support facts join
/// the background history index and, when any exist, drive a short
/// prefix-only fine-tune before ranking. With K = 0 the support set is empty,
/// so no index change and no fine-tune happen and the result equals zero-shot
/// evaluation exactly.
inline MetricsReport evaluate_few_shot(DualEncoderModel& model, const InductiveSplit& split,
                                       const Vocabs& vocabs, const TrainConfig& tc,
                                       const EvalOptions& opt = {}) {
  std::vector<Quadruple> support;
  for (const auto& [entity, facts] : split.support)
    support.insert(support.end(), facts.begin(), facts.end());

  TemporalKG history_kg;
  if (support.empty()) {
    history_kg = split.background;
  } else {
    std::vector<Quadruple> facts = split.background.facts;
    facts.insert(facts.end(), support.begin(), support.end());
    history_kg = build_indices(std::move(facts), vocabs);
  }

  // Fine-tuning needs at least one batch of >= 2 examples.
  if (!support.empty() && tc.support_finetune_steps > 0 && support.size() >= 2) {
    TrainConfig ft = tc;
    ft.freeze_policy = FreezePolicy::prefix_only;
    ft.backbone_epochs = 0;
    ft.checkpoint_dir.clear();
    ft.batch_size = std::min<int>(tc.batch_size, static_cast<int>(support.size()));
    const int batches_per_epoch = static_cast<int>(support.size()) / ft.batch_size;
    ft.epochs = (tc.support_finetune_steps + batches_per_epoch - 1) / batches_per_epoch;
    apply_freeze_policy(model, FreezePolicy::prefix_only);
    PreBatchQueue queue(model.cfg.loss.pre_batch_depth);
    TrainResult result;
    train_phase(model, support, history_kg, vocabs, ft, ft.epochs, queue, nullptr, result,
                nullptr);
  }

  const Protocol proto =
      support.empty() ? Protocol::inductive_zero_shot : Protocol::inductive_k_shot;
  return evaluate_protocol(model, split.query_test, history_kg, history_kg, vocabs, proto,
                           &split.unseen_entities, opt);
}

}  // namespace tkgr
