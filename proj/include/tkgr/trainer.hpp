#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tkgr/model.hpp"

namespace tkgr {

struct NonFiniteLoss : std::runtime_error {
  NonFiniteLoss(int epoch, int step, double loss)
      : std::runtime_error("non-finite loss " + std::to_string(loss) + " at epoch " +
                           std::to_string(epoch) + " step " + std::to_string(step)) {}
};

struct CorruptCheckpoint : std::runtime_error {
  explicit CorruptCheckpoint(const std::string& what)
      : std::runtime_error("corrupt checkpoint: " + what) {}
};

struct UnknownPolicy : std::runtime_error {
  explicit UnknownPolicy(const std::string& name)
      : std::runtime_error("unknown freeze policy: " + name) {}
};

enum class FreezePolicy { prefix_only, last_layer, last_6_layers, first_layer, full };

inline FreezePolicy parse_freeze_policy(const std::string& name) {
  if (name == "prefix_only") return FreezePolicy::prefix_only;
  if (name == "last_layer") return FreezePolicy::last_layer;
  if (name == "last_6_layers") return FreezePolicy::last_6_layers;
  if (name == "first_layer") return FreezePolicy::first_layer;
  if (name == "full") return FreezePolicy::full;
  throw UnknownPolicy(name);
}

inline const char* freeze_policy_name(FreezePolicy p) {
  switch (p) {
    case FreezePolicy::prefix_only: return "prefix_only";
    case FreezePolicy::last_layer: return "last_layer";
    case FreezePolicy::last_6_layers: return "last_6_layers";
    case FreezePolicy::first_layer: return "first_layer";
    case FreezePolicy::full: return "full";
  }
  return "?";
}

/// Prefix banks and the temperature are always trainable; the policy decides
/// which backbone weights join them.
inline void apply_freeze_policy(DualEncoderModel& model, FreezePolicy policy) {
  for (Parameter* p : model.weights.all()) p->trainable = false;
  for (Parameter* p : model.query_bank.all()) p->trainable = true;
  for (Parameter* p : model.candidate_bank.all()) p->trainable = true;
  model.log_tau.trainable = true;
  const int L = static_cast<int>(model.weights.layers.size());
  auto unfreeze_layer = [&](int j) {
    for (Parameter* p : model.weights.layers[j].all()) p->trainable = true;
  };
  switch (policy) {
    case FreezePolicy::prefix_only:
      break;
    case FreezePolicy::last_layer:
      unfreeze_layer(L - 1);
      break;
    case FreezePolicy::last_6_layers:
      for (int j = std::max(0, L - 6); j < L; ++j) unfreeze_layer(j);
      break;
    case FreezePolicy::first_layer:
      unfreeze_layer(0);
      break;
    case FreezePolicy::full:
      for (Parameter* p : model.weights.all()) p->trainable = true;
      break;
  }
}

/// Decoupled-weight-decay adaptive optimizer. Decay applies directly to
/// matrix weights only (not biases, norms, or the temperature).
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
        double weight_decay = 0.01)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(const std::vector<Parameter*>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (Parameter* p : params) {
      if (!p->trainable) continue;
      State& st = states_[p];
      if (st.m.size() != p->value.size()) {
        st.m = Tensor(p->value.rows(), p->value.cols());
        st.v = Tensor(p->value.rows(), p->value.cols());
      }
      const bool decay = p->value.rows() > 1 && p->value.cols() > 1;
      for (size_t i = 0; i < p->value.size(); ++i) {
        const double g = p->grad[i];
        st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g;
        st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g * g;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
        if (decay) p->value[i] -= lr * weight_decay_ * p->value[i];
      }
    }
  }

  void reset() {
    states_.clear();
    t_ = 0;
  }

 private:
  struct State {
    Tensor m, v;
  };
  double beta1_, beta2_, eps_, weight_decay_;
  int t_ = 0;
  std::map<Parameter*, State> states_;
};

/// Scales gradients so the global norm over trainable parameters does not
/// exceed max_norm. Returns the pre-clip norm.
inline double clip_gradients(const std::vector<Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    for (size_t i = 0; i < p->grad.size(); ++i) sq += p->grad[i] * p->grad[i];
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter* p : params) {
      if (!p->trainable) continue;
      for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= s;
    }
  }
  return norm;
}

// ---- checkpointing -------------------------------------------------------

/// Manifest (UTF-8 header) + little-endian 32-bit float blobs in manifest
/// order. Loading verifies names and shapes against the live model.
inline void save_checkpoint(const std::string& path, DualEncoderModel& model, int step) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorruptCheckpoint("cannot open '" + path + "' for writing");
  const EncoderConfig& ec = model.cfg.encoder;
  out << "TKGR-CKPT v1\n";
  out << "step " << step << "\n";
  out << "encoder " << ec.layers << " " << ec.width << " " << ec.heads << " " << ec.prefix_len
      << " " << ec.max_seq << " "
      << (ec.reparam == ReparamMode::embedding ? "embedding" : "mlp") << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", std::exp(model.log_tau.value.item()));
  out << "tau " << buf << "\n";
  for (Parameter* p : model.all_parameters())
    out << "param " << p->name << " " << p->value.rows() << " " << p->value.cols() << "\n";
  out << "end\n";
  for (Parameter* p : model.all_parameters()) {
    std::vector<float> blob(p->value.size());
    for (size_t i = 0; i < blob.size(); ++i) blob[i] = static_cast<float>(p->value[i]);
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
  }
  if (!out) throw CorruptCheckpoint("short write to '" + path + "'");
}

inline int load_checkpoint(const std::string& path, DualEncoderModel& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptCheckpoint("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "TKGR-CKPT v1")
    throw CorruptCheckpoint("bad magic line");
  int step = 0;
  auto params = model.all_parameters();
  size_t next = 0;
  while (std::getline(in, line) && line != "end") {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "step") {
      ls >> step;
    } else if (tag == "encoder") {
      int L, d, k, m, n;
      std::string mode;
      ls >> L >> d >> k >> m >> n >> mode;
      const EncoderConfig& ec = model.cfg.encoder;
      if (L != ec.layers || d != ec.width || k != ec.heads || m != ec.prefix_len ||
          n != ec.max_seq ||
          mode != (ec.reparam == ReparamMode::embedding ? "embedding" : "mlp"))
        throw CorruptCheckpoint("encoder configuration mismatch");
    } else if (tag == "param") {
      std::string name;
      int rows, cols;
      ls >> name >> rows >> cols;
      if (next >= params.size()) throw CorruptCheckpoint("extra parameter " + name);
      Parameter* p = params[next++];
      if (p->name != name || p->value.rows() != rows || p->value.cols() != cols)
        throw CorruptCheckpoint("parameter mismatch at " + name);
    }
  }
  if (line != "end") throw CorruptCheckpoint("manifest not terminated");
  if (next != params.size()) throw CorruptCheckpoint("missing parameters in manifest");
  for (Parameter* p : params) {
    std::vector<float> blob(p->value.size());
    in.read(reinterpret_cast<char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (static_cast<size_t>(in.gcount()) != blob.size() * sizeof(float))
      throw CorruptCheckpoint("truncated blob for " + p->name);
    for (size_t i = 0; i < blob.size(); ++i) p->value[i] = static_cast<double>(blob[i]);
  }
  return step;
}

// ---- training loop -------------------------------------------------------

struct TrainConfig {
  double lr = 5e-4;
  int epochs = 10;
  int batch_size = 32;
  uint64_t seed = 42;
  FreezePolicy freeze_policy = FreezePolicy::prefix_only;
  double clip_norm = 1.0;
  double weight_decay = 0.01;
  int backbone_epochs = 0;  // full-tuning epochs before the freeze policy applies
  int support_finetune_steps = 50;
  int in_batch_cap = -1;  // forwarded into the loss configuration
  std::string checkpoint_dir;  // empty: no checkpoints written

  void validate() const {
    if (lr <= 0.0) throw std::invalid_argument("learning rate must be positive");
    if (batch_size < 2)
      throw std::invalid_argument("batch size must be >= 2 (in-batch negatives)");
  }
};

struct TrainResult {
  std::vector<std::string> log_lines;  // "epoch<TAB>step<TAB>loss<TAB>lr<TAB>tau"
  double best_valid_mrr = -1.0;
  int best_epoch = -1;
  int steps = 0;
};

/// One optimization phase over the given facts: shuffled epochs, linear decay
/// of the learning rate to zero across all steps, gradient clipping,
/// deterministic under seed.
inline void train_phase(DualEncoderModel& model, const std::vector<Quadruple>& facts,
                        const TemporalKG& history_kg, const Vocabs& vocabs,
                        const TrainConfig& tc, int epochs, PreBatchQueue& queue,
                        const std::function<double()>& valid_mrr, TrainResult& result,
                        std::ostream* log) {
  tc.validate();
  auto params = model.all_parameters();
  AdamW opt(0.9, 0.999, 1e-8, tc.weight_decay);
  const int B = tc.batch_size;
  const int batches_per_epoch = static_cast<int>(facts.size()) / B;
  const long total_steps = static_cast<long>(batches_per_epoch) * epochs;
  if (total_steps == 0) return;

  std::vector<size_t> order(facts.size());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::mt19937_64 rng(tc.seed * 1000003ULL + static_cast<uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    double lr_now = tc.lr;
    for (int b = 0; b < batches_per_epoch; ++b) {
      std::vector<BatchExample> batch;
      for (int i = 0; i < B; ++i) {
        const Quadruple& q = facts[order[static_cast<size_t>(b) * B + i]];
        batch.push_back(make_example(q, history_kg, vocabs, model.cfg,
                                     tc.seed + static_cast<uint64_t>(step) * 31 + i));
      }
      Graph g;
      std::vector<PreBatchQueue::Entry> fresh;
      const auto loss = batch_loss(g, model, batch, queue, &fresh);
      const double loss_val = g.value(loss).item();
      if (!std::isfinite(loss_val)) throw NonFiniteLoss(epoch, static_cast<int>(step), loss_val);
      for (Parameter* p : params) p->zero_grad();
      g.backward(loss);
      clip_gradients(params, tc.clip_norm);
      lr_now = tc.lr * (1.0 - static_cast<double>(step) / total_steps);
      opt.step(params, lr_now);
      queue.push_batch(std::move(fresh));
      loss_sum += loss_val;
      ++step;
      ++result.steps;
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d\t%d\t%.6f\t%.8f\t%.6f", epoch, result.steps,
                  loss_sum / batches_per_epoch, lr_now,
                  std::max(std::exp(model.log_tau.value.item()), 1e-3));
    result.log_lines.emplace_back(buf);
    if (log) *log << buf << "\n" << std::flush;

    if (!tc.checkpoint_dir.empty()) {
      std::filesystem::create_directories(tc.checkpoint_dir);
      save_checkpoint(tc.checkpoint_dir + "/epoch_" + std::to_string(epoch) + ".ckpt", model,
                      result.steps);
    }
    if (valid_mrr) {
      const double mrr = valid_mrr();
      if (log) *log << "# valid_mrr " << mrr << "\n" << std::flush;
      if (mrr > result.best_valid_mrr) {
        result.best_valid_mrr = mrr;
        result.best_epoch = epoch;
        if (!tc.checkpoint_dir.empty())
          save_checkpoint(tc.checkpoint_dir + "/best.ckpt", model, result.steps);
      }
    }
  }
}

/// Full training: optional from-scratch backbone phase (fully tuned), then
/// the configured freeze policy.
inline TrainResult train(DualEncoderModel& model, const std::vector<Quadruple>& facts,
                         const TemporalKG& history_kg, const Vocabs& vocabs,
                         const TrainConfig& tc,
                         const std::function<double()>& valid_mrr = nullptr,
                         std::ostream* log = nullptr) {
  TrainResult result;
  model.cfg.loss.in_batch_cap = tc.in_batch_cap;
  PreBatchQueue queue(model.cfg.loss.pre_batch_depth);
  if (tc.backbone_epochs > 0) {
    apply_freeze_policy(model, FreezePolicy::full);
    train_phase(model, facts, history_kg, vocabs, tc, tc.backbone_epochs, queue, valid_mrr,
                result, log);
    queue = PreBatchQueue(model.cfg.loss.pre_batch_depth);
  }
  apply_freeze_policy(model, tc.freeze_policy);
  train_phase(model, facts, history_kg, vocabs, tc, tc.epochs, queue, valid_mrr, result, log);
  return result;
}

}  // namespace tkgr
