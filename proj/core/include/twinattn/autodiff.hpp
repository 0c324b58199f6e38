#pragma once

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "twinattn/tensor.hpp"

namespace twinattn {

// A learnable tensor with its accumulated gradient. Names are dotted paths
// ("decoder.block3.cross.proj_q.weight") and unique within a store.
struct Parameter {
  std::string name;
  Tensor2 tensor;
  Tensor2 grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, int rows, int cols)
      : name(std::move(n)), tensor(rows, cols), grad(rows, cols) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

// Owns every Parameter of a model. Deque storage keeps element addresses
// stable, so modules may hold Parameter* across later creations.
class ParameterStore {
 public:
  Parameter& create(const std::string& name, int rows, int cols);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  Parameter* find(const std::string& name);

  void zero_grads();
  size_t count() const { return params_.size(); }
  long long total_values() const;

  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, size_t> index_;
};

// Handle into a Tape node.
struct Value {
  int id = -1;
  int rows = 0;
  int cols = 0;
  bool valid() const { return id >= 0; }
};

// Reverse-accumulation gradient tape over a small set of dense primitives.
// A training step builds one graph, calls backward() once on a scalar, and
// the tape adds each parameter leaf's gradient into Parameter::grad.
// Confined to a single thread; values are immutable once produced.
class Tape {
 public:
  Value leaf(Tensor2 v, bool needs_grad = false);
  Value constant(const Tensor2& v) { return leaf(v, false); }
  Value param(Parameter& p);

  Value matmul(Value a, Value b);
  Value matmul_nt(Value a, Value b);  // a * b^T
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);  // elementwise
  Value scale(Value a, double c);
  Value add_const(Value a, double c);
  Value linear(Value x, Value w, Value b);  // x * w^T + b, w is (out, in)
  Value relu(Value x);
  Value gelu(Value x);  // exact erf form; smooth, so finite differences agree
  Value sigmoid(Value x);
  Value abs(Value x);
  Value row_softmax(Value x);
  // bias is a constant additive mask (entries 0 or -inf) applied pre-softmax.
  Value row_softmax_bias(Value x, const Tensor2& bias);
  Value layer_norm(Value x, Value gain, Value bias, double eps = kDefaultLayerNormEps);
  // Multi-head scaled dot-product attention; bias (optional, constant) is
  // shared across heads and added to every head's score matrix.
  Value multihead_attention(Value q, Value k, Value v, const Tensor2* bias, int heads);
  Value segment_mean(Value x, const std::vector<int>& assign, int num_segments);
  Value gather_rows(Value x, std::vector<int> rows);
  Value slice_cols(Value x, int c0, int len);
  Value concat_cols(Value a, Value b);
  Value sum_all(Value x);
  Value row_sums(Value x);                 // (n,m) -> (n,1)
  Value rowwise_dot(Value a, Value b);     // (n,m),(n,m) -> (n,1)
  Value add_col_broadcast(Value m, Value col);  // m[i,j] + col[i]
  Value add_row_broadcast(Value m, Value row);  // m[i,j] + row[j]

  // Scalar losses. Targets and weights are constants.
  Value cross_entropy_rows(Value logits, const std::vector<int>& targets, const std::vector<double>& row_w);
  Value bce_with_logits(Value logits, const Tensor2& targets, const std::vector<double>& row_w);
  Value dice_cost_rows(Value logits, const Tensor2& targets, const std::vector<double>& row_w);

  const Tensor2& value(Value v) const;
  const Tensor2& grad(Value v) const;
  double scalar(Value v) const;

  // Seeds d(loss)/d(loss) = 1, sweeps in reverse, accumulates into
  // Parameter::grad for every param leaf. `loss` must be 1x1.
  void backward(Value loss);

  void reset();
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor2 val;
    Tensor2 grad;  // empty until touched by backward
    bool needs_grad = false;
    std::function<void(Tape&, int)> back;  // (tape, own node id); empty for leaves
  };

  Value push(Tensor2 val, bool needs_grad, std::function<void(Tape&, int)> back);
  Tensor2& grad_ref(int id);
  void accumulate(int id, const Tensor2& g);
  bool has_grad(int id) const;
  bool needs(Value v) const { return nodes_[v.id].needs_grad; }
  const Tensor2& val_of(Value v) const;
  const Tensor2& out_grad(int self) const { return nodes_[self].grad; }

  std::deque<Node> nodes_;
  std::vector<std::pair<Parameter*, int>> param_leaves_;
};

}  // namespace twinattn
