#pragma once

#include "kt/rng.hpp"
#include "kt/tensor.hpp"

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace kt::num {

// Trainable tensor that outlives any single tape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Tensor::Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

// Reverse-mode tape, built during one forward pass and discarded after backward.
// With gradients disabled it records values only, for inference.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a parameter; repeated calls return the same node.
  Var leaf(Parameter& parameter);

  // For op implementations: records a node whose backward is kept only if any
  // parent requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
  }
  Var record(Tensor value, std::span<const Var> parents, Backward backward);

  const Tensor& value(std::size_t index) const { return nodes_[index].value; }
  Tensor& grad(std::size_t index);
  bool requires_grad(std::size_t index) const { return nodes_[index].requires_grad; }
  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1, propagates, and accumulates into Parameter::grad.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    Parameter* parameter = nullptr;
    bool requires_grad = false;
  };

  bool recording_;
  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, std::size_t> leaves_;
};

// Differentiable operations. Shapes are rank 2 (rows x cols) unless noted.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// a (r x c) + row (c) broadcast over rows.
Var add_row(Var a, Var row);
// a (r x c) * row (c) broadcast over rows.
Var mul_row(Var a, Var row);
Var relu(Var a);
// tanh approximation of the Gaussian error linear unit.
Var gelu(Var a);
Var square(Var a);
Var sum(Var a);
Var mean(Var a);
// Row-wise softmax; with `causal`, entry (i, j) for j > i is excluded (output 0).
Var softmax_rows(Var a, bool causal = false);
// Row-wise normalization followed by per-column gain and bias.
Var layer_norm(Var a, Var gain, Var bias, double epsilon = 1e-5);
Var slice_rows(Var a, std::size_t first, std::size_t count);
Var slice_cols(Var a, std::size_t first, std::size_t count);
Var concat_cols(const std::vector<Var>& parts);
// Stacks `times` copies of a vertically.
Var tile_rows(Var a, std::size_t times);
// Inverted dropout; identity when rate == 0.
Var dropout(Var a, double rate, Rng& rng);
// Mean of squared differences over all entries.
Var mse(Var predicted, Var target);

// Multi-head scaled dot-product attention over `batch` stacked sequences of length `seq`.
// q, k, v are (batch*seq) x d; heads split the columns evenly. Scores are scaled by
// 1/sqrt(d/heads). Output is the concatenation of head contexts, (batch*seq) x d.
Var multi_head_attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads,
                         bool causal);

// Attention probabilities of the same computation, (batch*heads*seq) x seq, head-major
// per sequence. Masked entries are exactly 0.
Tensor attention_weights(const Tensor& q, const Tensor& k, std::size_t batch, std::size_t seq, std::size_t heads,
                         bool causal);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace kt::num
