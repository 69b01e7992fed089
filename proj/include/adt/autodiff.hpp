#pragma once

// Tape-based reverse-mode automatic differentiation over dense matrices.
//
// A Graph records every operation in execution order, so the tape is already
// topologically sorted and backward() is a single reverse sweep. Parameters
// enter as leaves that reference (not copy) the parameter value; their
// gradients are pushed back into a ParamStore explicitly after backward().

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "adt/params.hpp"
#include "adt/tensor.hpp"

namespace adt {

template <class Real>
class Graph;

/// Handle to a node in a Graph.
template <class Real>
struct Var {
  Graph<Real>* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor<Real>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Half-open row range [begin, end).
struct RowSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const RowSpan&) const = default;
};

template <class Real>
class Graph {
 public:
  struct Node {
    Tensor<Real> owned;
    const Tensor<Real>* ref = nullptr;
    Tensor<Real> grad;
    std::function<void(std::uint32_t)> backward;
    const Parameter<Real>* param = nullptr;
    bool needs_grad = false;

    const Tensor<Real>& value() const { return ref ? *ref : owned; }
  };

  /// `record` controls whether backward closures are kept; inference graphs
  /// pass false and never allocate gradients. `rng` is required only when
  /// training with non-zero dropout.
  explicit Graph(bool training = false, bool record = true, std::mt19937_64* rng = nullptr)
      : training_(training), record_(record), rng_(rng) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training() const { return training_; }
  bool recording() const { return record_; }
  std::mt19937_64& rng() {
    if (!rng_) throw std::logic_error("Graph: dropout in training mode requires an rng");
    return *rng_;
  }

  Var<Real> input(Tensor<Real> t) { return push(std::move(t), nullptr, false); }

  Var<Real> param(const Parameter<Real>& p) {
    Node n;
    n.ref = &p.value;
    n.param = &p;
    n.needs_grad = record_;
    nodes_.push_back(std::move(n));
    return {this, std::uint32_t(nodes_.size() - 1)};
  }

  /// Appends an op result. `backward` receives the output node id and must
  /// accumulate into its inputs via grad(). Dropped when not recording.
  Var<Real> push(Tensor<Real> value, std::function<void(std::uint32_t)> backward,
                 bool needs_grad) {
    Node n;
    n.owned = std::move(value);
    n.needs_grad = record_ && needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, std::uint32_t(nodes_.size() - 1)};
  }

  const Tensor<Real>& value(Var<Real> v) const { return nodes_.at(v.id).value(); }
  bool needs_grad(Var<Real> v) const { return nodes_.at(v.id).needs_grad; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor<Real>& grad(std::uint32_t id) {
    auto& n = nodes_.at(id);
    if (n.grad.empty() && !n.value().empty()) n.grad = Tensor<Real>(n.value().shape());
    return n.grad;
  }
  bool has_grad(std::uint32_t id) const { return !nodes_.at(id).grad.empty(); }

  void backward(Var<Real> loss) {
    if (!record_) throw std::logic_error("backward: graph was built without recording");
    if (backward_done_) throw std::logic_error("backward: already called; reset_grads() first");
    if (value(loss).shape() != Shape{1, 1})
      throw ShapeError("backward(loss)", value(loss).shape(), Shape{1, 1});
    grad(loss.id)[0] = Real(1);
    for (std::int64_t id = loss.id; id >= 0; --id) {
      auto& n = nodes_[std::size_t(id)];
      if (n.backward && !n.grad.empty()) n.backward(std::uint32_t(id));
    }
    backward_done_ = true;
  }

  void reset_grads() {
    for (auto& n : nodes_) n.grad = Tensor<Real>();
    backward_done_ = false;
  }

  /// Adds the gradients of every parameter leaf into the store's matching
  /// parameter (looked up by name).
  void accumulate_param_grads(ParamStore<Real>& store) const {
    for (const auto& n : nodes_) {
      if (!n.param || n.grad.empty()) continue;
      auto& p = store.get(n.param->name);
      auto dst = p.grad.data();
      auto src = n.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }

  /// Multiply-accumulate operations executed by matmul-class kernels.
  std::uint64_t macs = 0;

 private:
  std::deque<Node> nodes_;
  bool training_;
  bool record_;
  bool backward_done_ = false;
  std::mt19937_64* rng_;
};

template <class Real>
const Tensor<Real>& Var<Real>::value() const {
  return graph->value(*this);
}

// ---------------------------------------------------------------------------
// Differentiable operations. All throw ShapeError on incompatible inputs.

template <class Real> Var<Real> matmul(Var<Real> a, Var<Real> b);
/// x * W + b with b broadcast over rows.
template <class Real> Var<Real> linear(Var<Real> x, Var<Real> w, Var<Real> b);
template <class Real> Var<Real> add(Var<Real> a, Var<Real> b);
/// Adds a 1 x n row to every row of a.
template <class Real> Var<Real> add_row(Var<Real> a, Var<Real> row);
template <class Real> Var<Real> scale(Var<Real> a, double s);
template <class Real> Var<Real> relu(Var<Real> a);
/// Row-wise softmax.
template <class Real> Var<Real> softmax(Var<Real> a);
/// Row-wise layer normalisation with learned gain and bias (both 1 x n).
template <class Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gain, Var<Real> bias, double eps = 1e-5);
/// Rows of `table` selected by `ids`.
template <class Real> Var<Real> embedding_lookup(Var<Real> table, std::span<const int> ids);
/// Column-wise concatenation [a ; b].
template <class Real> Var<Real> concat(Var<Real> a, Var<Real> b);
/// One output row per span: column-wise mean / max over the span's rows.
template <class Real> Var<Real> mean_pool(Var<Real> x, std::span<const RowSpan> spans);
template <class Real> Var<Real> max_pool(Var<Real> x, std::span<const RowSpan> spans);
/// Inverted dropout; identity unless the graph is in training mode.
template <class Real> Var<Real> dropout(Var<Real> x, double rate);
template <class Real> Var<Real> gather_rows(Var<Real> x, std::span<const std::size_t> rows);
/// Copy of `base` with rows[i] replaced by row i of `updates`.
template <class Real>
Var<Real> overwrite_rows(Var<Real> base, Var<Real> updates, std::span<const std::size_t> rows);
template <class Real> Var<Real> sum(Var<Real> a);

/// Multi-head scaled dot-product attention. Query row i attends to key/value
/// rows key_spans[i]. Dropout is applied to the attention probabilities.
template <class Real>
Var<Real> attention(Var<Real> q, Var<Real> k, Var<Real> v, std::span<const RowSpan> key_spans,
                    std::size_t n_heads, double dropout_rate);

/// Sum over rows of -log softmax(logits)[target]; returns a 1 x 1 node.
template <class Real>
Var<Real> softmax_cross_entropy(Var<Real> logits, std::span<const int> targets);

/// Per-row cross entropy of raw logits, outside any graph.
template <class Real>
std::vector<double> row_cross_entropy(const Tensor<Real>& logits, std::span<const int> targets);

}  // namespace adt
