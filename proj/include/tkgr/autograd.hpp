#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tkgr/tensor.hpp"

namespace tkgr {

struct DetachedLoss : std::runtime_error {
  DetachedLoss() : std::runtime_error("backward() on a value with no recorded provenance") {}
};

struct ZeroVector : std::runtime_error {
  ZeroVector() : std::runtime_error("l2_normalize of a (near-)zero vector") {}
};

/// A named trainable value. Gradients accumulate additively across backward passes.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor value, bool trainable = true)
      : name(std::move(name)),
        value(std::move(value)),
        grad(this->value.rows(), this->value.cols()),
        trainable(trainable) {}

  void zero_grad() { grad.zero(); }

  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

/// Reverse-mode tape. Nodes reference earlier nodes only, so creation order
/// is a topological order and backward is a single reverse sweep.
class Graph {
 public:
  using NodeId = int;

  NodeId leaf(Parameter& p) {
    NodeId id = new_node(p.value, p.trainable);
    nodes_[id].param = &p;
    return id;
  }

  NodeId constant(Tensor t) { return new_node(std::move(t), false); }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  size_t node_count() const { return nodes_.size(); }

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.cols() != B.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
    Tensor out(A.rows(), B.cols());
    matmul_accum(A, B, out);
    NodeId id = new_op(std::move(out), {a, b});
    nodes_[id].backprop = [this, id, a, b]() {
      const Tensor& g = nodes_[id].grad;
      if (needs(a)) matmul_nt_accum(g, val(b), nodes_[a].grad);
      if (needs(b)) matmul_tn_accum(val(a), g, nodes_[b].grad);
    };
    return id;
  }

  /// a * b^T; b is m x k, output n x m.
  NodeId matmul_nt(NodeId a, NodeId b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.cols() != B.cols()) throw ShapeMismatch("matmul_nt: inner dimensions differ");
    Tensor out(A.rows(), B.rows());
    matmul_nt_accum(A, B, out);
    NodeId id = new_op(std::move(out), {a, b});
    nodes_[id].backprop = [this, id, a, b]() {
      const Tensor& g = nodes_[id].grad;
      if (needs(a)) matmul_accum(g, val(b), nodes_[a].grad);
      if (needs(b)) matmul_tn_accum(g, val(a), nodes_[b].grad);
    };
    return id;
  }

  NodeId add(NodeId a, NodeId b) {
    require_same_shape(val(a), val(b), "add");
    Tensor out = val(a);
    for (size_t i = 0; i < out.size(); ++i) out[i] += val(b)[i];
    NodeId id = new_op(std::move(out), {a, b});
    nodes_[id].backprop = [this, id, a, b]() {
      const Tensor& g = nodes_[id].grad;
      if (needs(a))
        for (size_t i = 0; i < g.size(); ++i) nodes_[a].grad[i] += g[i];
      if (needs(b))
        for (size_t i = 0; i < g.size(); ++i) nodes_[b].grad[i] += g[i];
    };
    return id;
  }

  NodeId sub(NodeId a, NodeId b) { return add(a, scale(b, -1.0)); }

  NodeId scale(NodeId a, double s) {
    Tensor out = val(a);
    for (size_t i = 0; i < out.size(); ++i) out[i] *= s;
    NodeId id = new_op(std::move(out), {a});
    nodes_[id].backprop = [this, id, a, s]() {
      if (!needs(a)) return;
      const Tensor& g = nodes_[id].grad;
      for (size_t i = 0; i < g.size(); ++i) nodes_[a].grad[i] += s * g[i];
    };
    return id;
  }

  /// Broadcast-add a 1 x cols row vector to every row.
  NodeId add_rowvec(NodeId a, NodeId v) {
    const Tensor& A = val(a);
    const Tensor& V = val(v);
    if (V.rows() != 1 || V.cols() != A.cols()) throw ShapeMismatch("add_rowvec: bad row vector");
    Tensor out = A;
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out.at(i, j) += V.at(0, j);
    NodeId id = new_op(std::move(out), {a, v});
    nodes_[id].backprop = [this, id, a, v]() {
      const Tensor& g = nodes_[id].grad;
      if (needs(a))
        for (size_t i = 0; i < g.size(); ++i) nodes_[a].grad[i] += g[i];
      if (needs(v))
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) nodes_[v].grad.at(0, j) += g.at(i, j);
    };
    return id;
  }

  /// Broadcast-multiply every row by a 1 x cols row vector.
  NodeId mul_rowvec(NodeId a, NodeId v) {
    const Tensor& A = val(a);
    const Tensor& V = val(v);
    if (V.rows() != 1 || V.cols() != A.cols()) throw ShapeMismatch("mul_rowvec: bad row vector");
    Tensor out = A;
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out.at(i, j) *= V.at(0, j);
    NodeId id = new_op(std::move(out), {a, v});
    nodes_[id].backprop = [this, id, a, v]() {
      const Tensor& g = nodes_[id].grad;
      if (needs(a))
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) nodes_[a].grad.at(i, j) += g.at(i, j) * val(v).at(0, j);
      if (needs(v))
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) nodes_[v].grad.at(0, j) += g.at(i, j) * val(a).at(i, j);
    };
    return id;
  }

  NodeId concat_rows(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
    const int cols = val(parts[0]).cols();
    int rows = 0;
    for (NodeId p : parts) {
      if (val(p).cols() != cols) throw ShapeMismatch("concat_rows: column mismatch");
      rows += val(p).rows();
    }
    Tensor out(rows, cols);
    int r = 0;
    for (NodeId p : parts) {
      const Tensor& t = val(p);
      std::copy(t.data(), t.data() + t.size(), out.data() + static_cast<size_t>(r) * cols);
      r += t.rows();
    }
    NodeId id = new_op(std::move(out), parts);
    nodes_[id].backprop = [this, id, parts]() {
      const Tensor& g = nodes_[id].grad;
      int r = 0;
      for (NodeId p : parts) {
        const int pr = val(p).rows();
        if (needs(p)) {
          Tensor& pg = nodes_[p].grad;
          const double* src = g.data() + static_cast<size_t>(r) * g.cols();
          for (size_t i = 0; i < pg.size(); ++i) pg[i] += src[i];
        }
        r += pr;
      }
    };
    return id;
  }

  NodeId concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
    const int rows = val(parts[0]).rows();
    int cols = 0;
    for (NodeId p : parts) {
      if (val(p).rows() != rows) throw ShapeMismatch("concat_cols: row mismatch");
      cols += val(p).cols();
    }
    Tensor out(rows, cols);
    int c = 0;
    for (NodeId p : parts) {
      const Tensor& t = val(p);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < t.cols(); ++j) out.at(i, c + j) = t.at(i, j);
      c += t.cols();
    }
    NodeId id = new_op(std::move(out), parts);
    nodes_[id].backprop = [this, id, parts]() {
      const Tensor& g = nodes_[id].grad;
      int c = 0;
      for (NodeId p : parts) {
        const int pc = val(p).cols();
        if (needs(p)) {
          Tensor& pg = nodes_[p].grad;
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < pc; ++j) pg.at(i, j) += g.at(i, c + j);
        }
        c += pc;
      }
    };
    return id;
  }

  NodeId slice_cols(NodeId a, int start, int len) {
    const Tensor& A = val(a);
    if (start < 0 || len < 0 || start + len > A.cols()) throw ShapeMismatch("slice_cols: out of range");
    Tensor out(A.rows(), len);
    for (int i = 0; i < A.rows(); ++i)
      for (int j = 0; j < len; ++j) out.at(i, j) = A.at(i, start + j);
    NodeId id = new_op(std::move(out), {a});
    nodes_[id].backprop = [this, id, a, start, len]() {
      if (!needs(a)) return;
      const Tensor& g = nodes_[id].grad;
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < len; ++j) nodes_[a].grad.at(i, start + j) += g.at(i, j);
    };
    return id;
  }

  NodeId softmax_rows(NodeId a) {
    Tensor out = val(a);
    for (int i = 0; i < out.rows(); ++i) {
      double mx = out.at(i, 0);
      for (int j = 1; j < out.cols(); ++j) mx = std::max(mx, out.at(i, j));
      double sum = 0.0;
      for (int j = 0; j < out.cols(); ++j) {
        out.at(i, j) = std::exp(out.at(i, j) - mx);
        sum += out.at(i, j);
      }
      for (int j = 0; j < out.cols(); ++j) out.at(i, j) /= sum;
    }
    NodeId id = new_op(std::move(out), {a});
    nodes_[id].backprop = [this, id, a]() {
      if (!needs(a)) return;
      const Tensor& g = nodes_[id].grad;
      const Tensor& y = nodes_[id].value;
      for (int i = 0; i < g.rows(); ++i) {
        double dot = 0.0;
        for (int j = 0; j < g.cols(); ++j) dot += g.at(i, j) * y.at(i, j);
        for (int j = 0; j < g.cols(); ++j)
          nodes_[a].grad.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
      }
    };
    return id;
  }

  /// Per-row normalization to zero mean / unit variance (no affine).
  NodeId layer_norm(NodeId a) {
    static constexpr double kEps = 1e-5;
    const Tensor& A = val(a);
    Tensor out(A.rows(), A.cols());
    auto inv_std = std::make_shared<std::vector<double>>(A.rows());
    for (int i = 0; i < A.rows(); ++i) {
      double mean = 0.0;
      for (int j = 0; j < A.cols(); ++j) mean += A.at(i, j);
      mean /= A.cols();
      double var = 0.0;
      for (int j = 0; j < A.cols(); ++j) {
        const double d = A.at(i, j) - mean;
        var += d * d;
      }
      var /= A.cols();
      const double istd = 1.0 / std::sqrt(var + kEps);
      (*inv_std)[i] = istd;
      for (int j = 0; j < A.cols(); ++j) out.at(i, j) = (A.at(i, j) - mean) * istd;
    }
    NodeId id = new_op(std::move(out), {a});
    nodes_[id].backprop = [this, id, a, inv_std]() {
      if (!needs(a)) return;
      const Tensor& g = nodes_[id].grad;
      const Tensor& y = nodes_[id].value;
      const int n = g.cols();
      for (int i = 0; i < g.rows(); ++i) {
        double gsum = 0.0, gysum = 0.0;
        for (int j = 0; j < n; ++j) {
          gsum += g.at(i, j);
          gysum += g.at(i, j) * y.at(i, j);
        }
        const double istd = (*inv_std)[i];
        for (int j = 0; j < n; ++j)
          nodes_[a].grad.at(i, j) +=
              istd * (g.at(i, j) - gsum / n - y.at(i, j) * gysum / n);
      }
    };
    return id;
  }

  NodeId gelu(NodeId a) {
    static constexpr double kInvSqrt2 = 0.7071067811865475244;
    static constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    Tensor out = val(a);
    for (size_t i = 0; i < out.size(); ++i) {
      const double x = out[i];
      out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    NodeId id = new_op(std::move(out), {a});
    nodes_[id].backprop = [this, id, a]() {
      if (!needs(a)) return;
      const Tensor& g = nodes_[id].grad;
      const Tensor& x = val(a);
      for (size_t i = 0; i < g.size(); ++i) {
        const double v = x[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        nodes_[a].grad[i] += g[i] * (cdf + v * pdf);
      }
    };
    return id;
  }

  /// Column means over rows -> 1 x cols.
  NodeId mean_rows(NodeId a) {
    const Tensor& A = val(a);
    if (A.rows() == 0) throw ShapeMismatch("mean_rows: empty tensor");
    Tensor out(1, A.cols());
    for (int i = 0; i < A.rows(); ++i)
      for (int j = 0; j < A.cols(); ++j) out.at(0, j) += A.at(i, j);
    for (int j = 0; j < A.cols(); ++j) out.at(0, j) /= A.rows();
    NodeId id = new_op(std::move(out), {a});
    nodes_[id].backprop = [this, id, a]() {
      if (!needs(a)) return;
      const Tensor& g = nodes_[id].grad;
      const double inv = 1.0 / val(a).rows();
      for (int i = 0; i < val(a).rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) nodes_[a].grad.at(i, j) += g.at(0, j) * inv;
    };
    return id;
  }

  /// Mean over all elements -> 1 x 1.
  NodeId mean_all(NodeId a) {
    const Tensor& A = val(a);
    double s = 0.0;
    for (size_t i = 0; i < A.size(); ++i) s += A[i];
    NodeId id = new_op(Tensor::scalar(s / A.size()), {a});
    nodes_[id].backprop = [this, id, a]() {
      if (!needs(a)) return;
      const double g = nodes_[id].grad[0] / val(a).size();
      for (size_t i = 0; i < val(a).size(); ++i) nodes_[a].grad[i] += g;
    };
    return id;
  }

  NodeId sum(NodeId a) { return scale(mean_all(a), static_cast<double>(val(a).size())); }

  /// Row-wise L2 normalization. Throws ZeroVector on a near-zero row.
  NodeId l2_normalize(NodeId a) {
    const Tensor& A = val(a);
    Tensor out(A.rows(), A.cols());
    auto norms = std::make_shared<std::vector<double>>(A.rows());
    for (int i = 0; i < A.rows(); ++i) {
      double sq = 0.0;
      for (int j = 0; j < A.cols(); ++j) sq += A.at(i, j) * A.at(i, j);
      const double nrm = std::sqrt(sq);
      if (nrm < 1e-12) throw ZeroVector();
      (*norms)[i] = nrm;
      for (int j = 0; j < A.cols(); ++j) out.at(i, j) = A.at(i, j) / nrm;
    }
    NodeId id = new_op(std::move(out), {a});
    nodes_[id].backprop = [this, id, a, norms]() {
      if (!needs(a)) return;
      const Tensor& g = nodes_[id].grad;
      const Tensor& y = nodes_[id].value;
      for (int i = 0; i < g.rows(); ++i) {
        double dot = 0.0;
        for (int j = 0; j < g.cols(); ++j) dot += g.at(i, j) * y.at(i, j);
        for (int j = 0; j < g.cols(); ++j)
          nodes_[a].grad.at(i, j) += (g.at(i, j) - y.at(i, j) * dot) / (*norms)[i];
      }
    };
    return id;
  }

  /// Select rows of a table by index (duplicates allowed).
  NodeId gather_rows(NodeId table, std::vector<int> ids) {
    const Tensor& T = val(table);
    for (int r : ids)
      if (r < 0 || r >= T.rows()) throw ShapeMismatch("gather_rows: index out of range");
    Tensor out(static_cast<int>(ids.size()), T.cols());
    for (size_t i = 0; i < ids.size(); ++i)
      std::copy(T.data() + static_cast<size_t>(ids[i]) * T.cols(),
                T.data() + static_cast<size_t>(ids[i] + 1) * T.cols(),
                out.data() + i * T.cols());
    NodeId id = new_op(std::move(out), {table});
    auto idx = std::make_shared<std::vector<int>>(std::move(ids));
    nodes_[id].backprop = [this, id, table, idx]() {
      if (!needs(table)) return;
      const Tensor& g = nodes_[id].grad;
      Tensor& tg = nodes_[table].grad;
      for (size_t i = 0; i < idx->size(); ++i)
        for (int j = 0; j < g.cols(); ++j) tg.at((*idx)[i], j) += g.at(static_cast<int>(i), j);
    };
    return id;
  }

  /// Per-row dot product of two same-shape matrices -> n x 1.
  NodeId rowwise_dot(NodeId a, NodeId b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require_same_shape(A, B, "rowwise_dot");
    Tensor out(A.rows(), 1);
    for (int i = 0; i < A.rows(); ++i) {
      double acc = 0.0;
      for (int j = 0; j < A.cols(); ++j) acc += A.at(i, j) * B.at(i, j);
      out.at(i, 0) = acc;
    }
    NodeId id = new_op(std::move(out), {a, b});
    nodes_[id].backprop = [this, id, a, b]() {
      const Tensor& g = nodes_[id].grad;
      for (int i = 0; i < val(a).rows(); ++i) {
        const double gi = g.at(i, 0);
        if (needs(a))
          for (int j = 0; j < val(a).cols(); ++j)
            nodes_[a].grad.at(i, j) += gi * val(b).at(i, j);
        if (needs(b))
          for (int j = 0; j < val(a).cols(); ++j)
            nodes_[b].grad.at(i, j) += gi * val(a).at(i, j);
      }
    };
    return id;
  }

  NodeId exp(NodeId a) {
    Tensor out = val(a);
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
    NodeId id = new_op(std::move(out), {a});
    nodes_[id].backprop = [this, id, a]() {
      if (!needs(a)) return;
      const Tensor& g = nodes_[id].grad;
      const Tensor& y = nodes_[id].value;
      for (size_t i = 0; i < g.size(); ++i) nodes_[a].grad[i] += g[i] * y[i];
    };
    return id;
  }

  /// max(a, floor) elementwise; gradient passes only where a > floor.
  NodeId clamp_min(NodeId a, double floor) {
    Tensor out = val(a);
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], floor);
    NodeId id = new_op(std::move(out), {a});
    nodes_[id].backprop = [this, id, a, floor]() {
      if (!needs(a)) return;
      const Tensor& g = nodes_[id].grad;
      for (size_t i = 0; i < g.size(); ++i)
        if (val(a)[i] > floor) nodes_[a].grad[i] += g[i];
    };
    return id;
  }

  /// Elementwise division by a 1x1 scalar node.
  NodeId div_scalar(NodeId a, NodeId s) {
    if (val(s).size() != 1) throw ShapeMismatch("div_scalar: divisor must be 1x1");
    const double sv = val(s)[0];
    Tensor out = val(a);
    for (size_t i = 0; i < out.size(); ++i) out[i] /= sv;
    NodeId id = new_op(std::move(out), {a, s});
    nodes_[id].backprop = [this, id, a, s, sv]() {
      const Tensor& g = nodes_[id].grad;
      const Tensor& y = nodes_[id].value;
      if (needs(a))
        for (size_t i = 0; i < g.size(); ++i) nodes_[a].grad[i] += g[i] / sv;
      if (needs(s)) {
        double acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i) acc += g[i] * y[i];
        nodes_[s].grad[0] -= acc / sv;
      }
    };
    return id;
  }

  /// Row-wise log-sum-exp over entries where mask != 0 -> n x 1.
  /// Every row must have at least one active entry.
  NodeId masked_logsumexp_rows(NodeId a, Tensor mask) {
    const Tensor& A = val(a);
    require_same_shape(A, mask, "masked_logsumexp_rows");
    Tensor out(A.rows(), 1);
    for (int i = 0; i < A.rows(); ++i) {
      int active = 0;
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < A.cols(); ++j)
        if (mask.at(i, j) != 0.0) {
          ++active;
          mx = std::max(mx, A.at(i, j));  // NaN inputs propagate through sum below
        }
      if (active == 0) throw ShapeMismatch("masked_logsumexp_rows: empty row mask");
      double sum = 0.0;
      for (int j = 0; j < A.cols(); ++j)
        if (mask.at(i, j) != 0.0) sum += std::exp(A.at(i, j) - mx);
      out.at(i, 0) = mx + std::log(sum);
    }
    NodeId id = new_op(std::move(out), {a});
    auto mk = std::make_shared<Tensor>(std::move(mask));
    nodes_[id].backprop = [this, id, a, mk]() {
      if (!needs(a)) return;
      const Tensor& g = nodes_[id].grad;
      const Tensor& lse = nodes_[id].value;
      const Tensor& A = val(a);
      for (int i = 0; i < A.rows(); ++i)
        for (int j = 0; j < A.cols(); ++j)
          if (mk->at(i, j) != 0.0)
            nodes_[a].grad.at(i, j) += g.at(i, 0) * std::exp(A.at(i, j) - lse.at(i, 0));
    };
    return id;
  }

  /// Reverse sweep from a 1x1 loss node. Trainable parameter gradients
  /// accumulate into Parameter::grad.
  void backward(NodeId loss) {
    if (val(loss).size() != 1) throw ShapeMismatch("backward: loss must be 1x1");
    if (!nodes_[loss].requires_grad) throw DetachedLoss();
    for (Node& n : nodes_)
      if (n.requires_grad) n.grad.zero();
    nodes_[loss].grad[0] = 1.0;
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad) continue;
      if (n.backprop) n.backprop();
      if (n.param && n.param->trainable)
        for (size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void()> backprop;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  const Tensor& val(NodeId id) const { return nodes_[id].value; }
  bool needs(NodeId id) const { return nodes_[id].requires_grad; }

  NodeId new_node(Tensor value, bool requires_grad) {
    Node n;
    n.requires_grad = requires_grad;
    if (requires_grad) n.grad = Tensor(value.rows(), value.cols());
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId new_op(Tensor value, const std::vector<NodeId>& inputs) {
    bool rg = false;
    for (NodeId i : inputs) rg = rg || nodes_[i].requires_grad;
    return new_node(std::move(value), rg);
  }

  std::vector<Node> nodes_;
};

/// Central-difference check of reverse-mode gradients. `build` must construct
/// the loss from the current parameter values on the given fresh graph.
/// Returns the worst relative error over all trainable coordinates.
inline double finite_difference_check(const std::function<Graph::NodeId(Graph&)>& build,
                                      const std::vector<Parameter*>& params, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_difference_check: eps must be positive");
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(build(g));
  }
  auto eval = [&]() {
    Graph g;
    return g.value(build(g)).item();
  };
  double worst = 0.0;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    for (size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double fp = eval();
      p->value[i] = orig - eps;
      const double fm = eval();
      p->value[i] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = p->grad[i];
      // The floor keeps coordinates whose true gradient sits below the FD
      // noise level (~|f|*1e-16/eps) from reporting spurious disagreement.
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

}  // namespace tkgr
