#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rxnpt/smiles.h"
#include "rxnpt/tensor.h"

namespace rxnpt {

// A trainable tensor with its gradient slot and AdamW state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor first_moment;
  Tensor second_moment;
  std::int64_t step = 0;
};

// Ordered collection of named parameters. Element addresses are stable.
class ParameterSet {
public:
  Parameter &add(std::string name, Tensor init);

  std::size_t size() const { return params_.size(); }
  Parameter &operator[](std::size_t i) { return params_[i]; }
  const Parameter &operator[](std::size_t i) const { return params_[i]; }
  Parameter *find(const std::string &name);
  const Parameter *find(const std::string &name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::size_t element_count() const;

private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Graph;

// Handle to a node in a Graph.
class Var {
public:
  Var() = default;
  Var(Graph *graph, int id) : graph_(graph), id_(id) {}

  const Tensor &value() const;
  Graph *graph() const { return graph_; }
  int id() const { return id_; }

private:
  Graph *graph_ = nullptr;
  int id_ = -1;
};

// Tape for reverse-mode differentiation. One graph per forward pass; nodes are
// appended in evaluation order and differentiated in reverse.
class Graph {
public:
  using Backward = std::function<void(Graph &, int self)>;

  explicit Graph(bool training = false, std::uint64_t dropout_seed = 0);
  Graph(const Graph &) = delete;
  Graph &operator=(const Graph &) = delete;

  bool training() const { return training_; }
  Rng &dropout_rng() { return dropout_rng_; }

  Var constant(Tensor value);
  // Leaf whose gradient is kept after backward().
  Var variable(Tensor value);
  // Leaf aliasing a parameter. Its gradient stays on the graph until
  // accumulate_param_grads() adds it into the owning ParameterSet.
  Var param(const Parameter &p);

  Var record(Tensor value, std::vector<int> parents, Backward backward);

  const Tensor &value(int id) const;
  const Tensor &value(Var v) const { return value(v.id()); }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of a node, zero-allocated on first use.
  Tensor &grad(int id);
  const Tensor &grad(Var v) const { return nodes_[v.id()].grad; }

  // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one element.
  void backward(Var loss);
  // Adds the gradients of every parameter leaf that belongs to `params`.
  void accumulate_param_grads(ParameterSet &params) const;

  std::size_t node_count() const { return nodes_.size(); }

private:
  struct Node {
    Tensor own;
    const Tensor *external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    const Parameter *param = nullptr;
    Backward backward;
  };

  bool training_;
  Rng dropout_rng_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter *, int> param_nodes_;
};

// Which (query, key) pairs may attend.
struct AttentionMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> allowed;

  static AttentionMask full(std::size_t queries, std::size_t keys);
  static AttentionMask causal(std::size_t length);
  // Keys at positions >= valid_keys are masked for every query.
  static AttentionMask key_padding(std::size_t queries, std::size_t keys,
                                   std::size_t valid_keys);
  bool operator()(std::size_t q, std::size_t k) const { return allowed[q * keys + k] != 0; }
};

struct CrossEntropy {
  Real loss = 0;
  Tensor gradient;  // d(mean loss)/d(logits)
  std::size_t counted = 0;
};

// Mean softmax cross-entropy over rows whose target differs from ignore_id.
CrossEntropy softmax_cross_entropy(const Tensor &logits, std::span<const int> targets,
                                   int ignore_id);

namespace ops {

Var matmul(Var a, Var b);
// x (m, k) times w (k, n) plus bias (n).
Var linear(Var x, Var w, Var b);
Var add(Var a, Var b);
Var sum(std::span<const Var> terms);
Var scale(Var a, Real factor);
Var relu(Var a);
// Row-wise normalisation with learned gain and bias of shape (d).
Var layer_norm(Var x, Var gain, Var bias, Real eps = Real(1e-5));
Var embedding(std::span<const int> ids, Var table);
// Inverted dropout; identity outside training graphs or when rate is zero.
Var dropout(Var x, Real rate);
// Scaled dot-product attention over `heads` equal slices of the width.
// Masked pairs receive exactly zero weight. When `weights_out` is non-null it
// receives the (heads, queries, keys) attention weights.
Var attention(Var queries, Var keys, Var values, const AttentionMask &mask,
              std::size_t heads, Tensor *weights_out = nullptr);
// Sum of all rows of x divided by `divisor`, as a (1, d) row.
Var mean_rows(Var x, Real divisor);
// Appends zero rows so the result has `rows` rows.
Var pad_rows(Var x, std::size_t rows);
Var softmax_cross_entropy(Var logits, std::span<const int> targets, int ignore_id);
// Mean squared error over entries where mask is nonzero.
Var masked_mse(Var predictions, const Tensor &targets, const Tensor &mask);
// Mean sigmoid binary cross-entropy over entries where mask is nonzero.
Var masked_sigmoid_bce(Var logits, const Tensor &targets, const Tensor &mask);

}  // namespace ops
}  // namespace rxnpt
