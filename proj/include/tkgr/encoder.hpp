#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tkgr/autograd.hpp"
#include "tkgr/tokenizer.hpp"

namespace tkgr {

struct EmptySequence : std::runtime_error {
  EmptySequence() : std::runtime_error("encode: empty token sequence") {}
};

enum class ReparamMode { embedding, mlp };
enum class Tower { query, candidate };

struct EncoderConfig {
  int layers = 2;
  int width = 64;
  int heads = 4;
  int prefix_len = 4;
  int max_seq = 128;
  ReparamMode reparam = ReparamMode::embedding;

  void validate() const {
    if (width % heads != 0) throw std::invalid_argument("width must be divisible by heads");
    if (prefix_len < 0) throw std::invalid_argument("prefix length must be >= 0");
    if (max_seq < 2) throw std::invalid_argument("max sequence length must be >= 2");
    if (layers < 1) throw std::invalid_argument("layer count must be >= 1");
  }
};

struct LayerWeights {
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;
  Parameter ff1, fb1, ff2, fb2;
  Parameter ln1_g, ln1_b, ln2_g, ln2_b;

  std::vector<Parameter*> all() {
    return {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo,
            &ff1, &fb1, &ff2, &fb2, &ln1_g, &ln1_b, &ln2_g, &ln2_b};
  }
};

/// Backbone weights. Shared by both towers.
struct EncoderWeights {
  Parameter token_emb;  // vocab x d
  Parameter pos_emb;    // max_seq x d
  std::vector<LayerWeights> layers;

  static EncoderWeights init(const EncoderConfig& cfg, int vocab_size, uint64_t seed) {
    cfg.validate();
    std::mt19937 rng(static_cast<uint32_t>(seed));
    const int d = cfg.width;
    const double sd = 0.1;
    EncoderWeights w;
    w.token_emb = Parameter("token_emb", Tensor::randn(vocab_size, d, rng, sd));
    w.pos_emb = Parameter("pos_emb", Tensor::randn(cfg.max_seq, d, rng, sd));
    for (int j = 0; j < cfg.layers; ++j) {
      const std::string p = "layer" + std::to_string(j) + ".";
      LayerWeights lw;
      lw.wq = Parameter(p + "wq", Tensor::randn(d, d, rng, sd));
      lw.bq = Parameter(p + "bq", Tensor(1, d));
      lw.wk = Parameter(p + "wk", Tensor::randn(d, d, rng, sd));
      lw.bk = Parameter(p + "bk", Tensor(1, d));
      lw.wv = Parameter(p + "wv", Tensor::randn(d, d, rng, sd));
      lw.bv = Parameter(p + "bv", Tensor(1, d));
      lw.wo = Parameter(p + "wo", Tensor::randn(d, d, rng, sd));
      lw.bo = Parameter(p + "bo", Tensor(1, d));
      lw.ff1 = Parameter(p + "ff1", Tensor::randn(d, 4 * d, rng, sd));
      lw.fb1 = Parameter(p + "fb1", Tensor(1, 4 * d));
      lw.ff2 = Parameter(p + "ff2", Tensor::randn(4 * d, d, rng, sd));
      lw.fb2 = Parameter(p + "fb2", Tensor(1, d));
      auto ones = Tensor(1, d);
      ones.fill(1.0);
      lw.ln1_g = Parameter(p + "ln1_g", ones);
      lw.ln1_b = Parameter(p + "ln1_b", Tensor(1, d));
      lw.ln2_g = Parameter(p + "ln2_g", ones);
      lw.ln2_b = Parameter(p + "ln2_b", Tensor(1, d));
      w.layers.push_back(std::move(lw));
    }
    return w;
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> ps = {&token_emb, &pos_emb};
    for (LayerWeights& lw : layers)
      for (Parameter* p : lw.all()) ps.push_back(p);
    return ps;
  }
};

/// Per-layer, per-tower virtual-token prefix parameters. In mlp mode the
/// per-layer prefixes are produced from a base embedding through a two-layer
/// projection; in embedding mode they are stored directly.
struct PrefixBank {
  ReparamMode mode = ReparamMode::embedding;
  int layer_count = 0, prefix_len = 0, width = 0;
  std::vector<Parameter> layer_prefix;  // embedding mode: L tensors of m x d
  Parameter base, w1, b1, w2, b2;       // mlp mode

  static PrefixBank init(const EncoderConfig& cfg, const std::string& tower_name,
                         uint64_t seed) {
    std::mt19937 rng(static_cast<uint32_t>(seed));
    const int d = cfg.width, m = cfg.prefix_len, L = cfg.layers;
    PrefixBank bank;
    bank.mode = cfg.reparam;
    bank.layer_count = L;
    bank.prefix_len = m;
    bank.width = d;
    const std::string pre = tower_name + ".prefix.";
    if (m == 0) return bank;
    if (cfg.reparam == ReparamMode::embedding) {
      for (int j = 0; j < L; ++j)
        bank.layer_prefix.emplace_back(pre + "p" + std::to_string(j),
                                       Tensor::randn(m, d, rng, 0.1));
    } else {
      const int hidden = d;
      bank.base = Parameter(pre + "base", Tensor::randn(m, d, rng, 0.1));
      bank.w1 = Parameter(pre + "w1", Tensor::randn(d, hidden, rng, 0.1));
      bank.b1 = Parameter(pre + "b1", Tensor(1, hidden));
      bank.w2 = Parameter(pre + "w2", Tensor::randn(hidden, L * d, rng, 0.1));
      bank.b2 = Parameter(pre + "b2", Tensor(1, L * d));
    }
    return bank;
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> ps;
    if (prefix_len == 0) return ps;
    if (mode == ReparamMode::embedding) {
      for (Parameter& p : layer_prefix) ps.push_back(&p);
    } else {
      ps = {&base, &w1, &b1, &w2, &b2};
    }
    return ps;
  }

  size_t parameter_count() {
    size_t n = 0;
    for (Parameter* p : all()) n += p->value.size();
    return n;
  }
};

/// Per-layer m x d prefix tensors for one forward pass.
inline std::vector<Graph::NodeId> materialize_prefix(Graph& g, PrefixBank& bank,
                                                     const EncoderConfig& cfg) {
  std::vector<Graph::NodeId> out;
  if (cfg.prefix_len == 0) return out;
  if (bank.mode == ReparamMode::embedding) {
    for (Parameter& p : bank.layer_prefix) out.push_back(g.leaf(p));
  } else {
    const auto h1 = g.gelu(g.add_rowvec(g.matmul(g.leaf(bank.base), g.leaf(bank.w1)),
                                        g.leaf(bank.b1)));
    const auto flat = g.add_rowvec(g.matmul(h1, g.leaf(bank.w2)), g.leaf(bank.b2));
    for (int j = 0; j < cfg.layers; ++j)
      out.push_back(g.slice_cols(flat, j * cfg.width, cfg.width));
  }
  return out;
}

/// One transformer block with prefix-augmented keys and values: queries are
/// computed over text positions only, keys and values over prefix || text.
/// Output has exactly n text rows. prefix < 0 means no prefix (vanilla block).
inline Graph::NodeId prefix_attention_layer(Graph& g, Graph::NodeId h, Graph::NodeId prefix,
                                            LayerWeights& lw, const EncoderConfig& cfg) {
  const int d = cfg.width, k = cfg.heads, dh = d / k;
  const Graph::NodeId htil = prefix >= 0 ? g.concat_rows({prefix, h}) : h;
  const auto q = g.add_rowvec(g.matmul(h, g.leaf(lw.wq)), g.leaf(lw.bq));
  const auto key = g.add_rowvec(g.matmul(htil, g.leaf(lw.wk)), g.leaf(lw.bk));
  const auto val = g.add_rowvec(g.matmul(htil, g.leaf(lw.wv)), g.leaf(lw.bv));
  std::vector<Graph::NodeId> heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int i = 0; i < k; ++i) {
    const auto qi = g.slice_cols(q, i * dh, dh);
    const auto ki = g.slice_cols(key, i * dh, dh);
    const auto vi = g.slice_cols(val, i * dh, dh);
    const auto attn = g.softmax_rows(g.scale(g.matmul_nt(qi, ki), scale));
    heads.push_back(g.matmul(attn, vi));
  }
  const auto merged = k == 1 ? heads[0] : g.concat_cols(heads);
  const auto proj = g.add_rowvec(g.matmul(merged, g.leaf(lw.wo)), g.leaf(lw.bo));
  const auto x = g.add_rowvec(
      g.mul_rowvec(g.layer_norm(g.add(h, proj)), g.leaf(lw.ln1_g)), g.leaf(lw.ln1_b));
  const auto ff_in = g.gelu(g.add_rowvec(g.matmul(x, g.leaf(lw.ff1)), g.leaf(lw.fb1)));
  const auto ff = g.add_rowvec(g.matmul(ff_in, g.leaf(lw.ff2)), g.leaf(lw.fb2));
  return g.add_rowvec(g.mul_rowvec(g.layer_norm(g.add(x, ff)), g.leaf(lw.ln2_g)),
                      g.leaf(lw.ln2_b));
}

/// Runs the full stack and returns the mean over text positions of the last
/// layer (1 x d). Prefix rows never enter the pooling.
inline Graph::NodeId encode(Graph& g, const std::vector<int>& ids, EncoderWeights& weights,
                            PrefixBank* bank, const EncoderConfig& cfg) {
  if (ids.empty()) throw EmptySequence();
  if (ids.size() > static_cast<size_t>(cfg.max_seq))
    throw ShapeMismatch("encode: sequence exceeds max length");
  std::vector<int> positions(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
  auto h = g.add(g.gather_rows(g.leaf(weights.token_emb), ids),
                 g.gather_rows(g.leaf(weights.pos_emb), positions));
  std::vector<Graph::NodeId> prefixes;
  if (bank && cfg.prefix_len > 0) prefixes = materialize_prefix(g, *bank, cfg);
  for (int j = 0; j < cfg.layers; ++j) {
    const Graph::NodeId p = prefixes.empty() ? -1 : prefixes[j];
    h = prefix_attention_layer(g, h, p, weights.layers[j], cfg);
  }
  return g.mean_rows(h);
}

}  // namespace tkgr
