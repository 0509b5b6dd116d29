#pragma once

// Reverse-mode differentiation over 2-D double matrices.
//
// A Tape records every operation applied to its variables. Rows are tokens,
// columns are features; sequences from several examples are stacked along the
// rows and the attention op receives an explicit layout describing which
// query rows may look at which key rows.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "oneframe/parameters.hpp"

namespace oneframe::ag {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool defined() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Mat value);
  // Differentiable input not owned by a ParameterStore (tests, oracles).
  Var leaf(Mat value);
  // Registers a parameter once per tape; later calls return the same node.
  Var parameter(const Parameter& p);

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  // Accumulated gradient of a node; zero matrix if nothing flowed into it.
  Mat grad(const Var& v) const;

  // Gradient buffer of a node, allocated on first touch.
  Mat& grad_buffer(int id);

  void backward(const Var& scalar);

  // Pairs of (parameter, gradient) for every parameter used on this tape.
  std::vector<std::pair<const Parameter*, Mat>> parameter_grads() const;

  Var record(Mat value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Mat value, const std::vector<Var>& inputs, Backward backward);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    bool needs_grad = false;
  };
  bool any_needs_grad(const Var* begin, const Var* end) const;

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<std::pair<const Parameter*, int>> params_;
  std::unordered_map<const Parameter*, int> param_index_;
};

// Which key rows a block of query rows attends over. Several spans may share
// the same key rows (e.g. many texts against one video).
struct AttentionSpan {
  int q_begin = 0;
  int q_len = 0;
  int k_begin = 0;
  int k_len = 0;
};

struct AttentionLayout {
  std::vector<AttentionSpan> spans;
  // Per key row; empty means every key is valid.
  std::vector<unsigned char> key_valid;
  // Query i of a span only sees keys 0..i of that span.
  bool causal = false;
};

using LayoutPtr = std::shared_ptr<const AttentionLayout>;

Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
// a * s where s is 1x1.
Var scale_by(const Var& a, const Var& s);
// Adds a 1 x cols row to every row of a.
Var add_row(const Var& a, const Var& row);
Var gelu(const Var& a);
Var exp(const Var& a);
Var reciprocal(const Var& a);
// Identity inside [lo, hi], constant (zero gradient) outside.
Var clamp(const Var& a, double lo, double hi);
Var transpose(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps);
Var l2_normalize_rows(const Var& a, double eps);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& a, int begin, int count);
Var gather_rows(const Var& a, std::vector<int> rows);
// Multi-head scaled dot-product attention over the spans of `layout`.
// q, k, v carry all heads side by side in their columns.
Var attention(const Var& q, const Var& k, const Var& v, int heads, LayoutPtr layout);

// Mean softmax cross-entropy over rows whose target is >= 0.
// Returns 0 (and no gradient) when no row is labelled.
Var cross_entropy(const Var& logits, const std::vector<int>& targets);
// Sum over rows of -sum_j target(i,j) * log softmax(logits)(i,j).
Var soft_cross_entropy_sum(const Var& logits, const Mat& targets);
// Mean binary cross-entropy on logits (n x 1).
Var bce_with_logits(const Var& logits, const std::vector<double>& targets);

}  // namespace oneframe::ag
