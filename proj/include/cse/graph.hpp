#pragma once

#include <functional>
#include <memory>
#include <random>
#include <unordered_map>
#include <vector>

#include "cse/common.hpp"
#include "cse/params.hpp"

namespace cse::ag {

using cse::Mat;

class Graph;

struct Node {
  Mat value;
  Mat grad;  // lazily sized on first accumulation
  bool needs_grad = false;
  std::function<void()> backprop;  // pushes this->grad into parents
};

// Cheap handle into a Graph's tape. Valid only while the graph lives.
class Var {
 public:
  Var() = default;
  const Mat& value() const { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool valid() const { return node_ != nullptr; }
  Node* node() const { return node_; }
  Graph* graph() const { return graph_; }

 private:
  friend class Graph;
  Var(Node* n, Graph* g) : node_(n), graph_(g) {}
  Node* node_ = nullptr;
  Graph* graph_ = nullptr;
};

// Dynamic computation tape. Nodes are appended in creation order; backward()
// walks the tape in reverse, so topological order is free. One backward pass
// per graph.
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  // Constant input; never receives gradient.
  Var input(Mat m);
  // Leaf bound to a parameter; backward accumulates into p.grad. Repeated
  // calls for the same parameter return the same tape node.
  Var param(Param& p);

  // Backpropagate from a 1x1 loss node through the whole tape.
  void backward(const Var& loss);

  Var make(Mat value, bool needs_grad);
  std::size_t size() const { return tape_.size(); }

 private:
  std::vector<std::unique_ptr<Node>> tape_;
  std::unordered_map<const Param*, Node*> param_nodes_;
  bool grad_enabled_;
};

Mat& ensure_grad(Node* n);

// ---- elementwise / shape ops ----
Var add(const Var& a, const Var& b);          // same shape
Var add_rowvec(const Var& a, const Var& b);   // b is 1xC, broadcast over rows
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);          // Hadamard
Var mul_scalar(const Var& a, const Var& s);   // s is 1x1, broadcast
Var scale(const Var& a, double s);
Var affine(const Var& a, double alpha, double beta);  // alpha*a + beta
Var one_minus(const Var& a);
Var transpose(const Var& a);
Var matmul(const Var& a, const Var& b);
Var concat_cols(const std::vector<Var>& xs);
Var concat_rows(const std::vector<Var>& xs);
Var slice_cols(const Var& a, Eigen::Index c0, Eigen::Index n);
Var slice_rows(const Var& a, Eigen::Index r0, Eigen::Index n);
Var gather_rows(const Var& a, const std::vector<int>& idx);
Var repeat_rows(const Var& a, Eigen::Index n);  // a is 1xC
// entries (rows[i], cols[i]) as an n x 1 column
Var gather_entries(const Var& a, const std::vector<int>& rows,
                   const std::vector<int>& cols);
// out(r, ids[i]) += a(r, i); result is R x width
Var scatter_sum_cols(const Var& a, const std::vector<int>& ids,
                     Eigen::Index width);

// ---- nonlinearities ----
Var sigmoid(const Var& a);
Var tanh_v(const Var& a);
Var gelu(const Var& a);
// log(max(a, floor)); gradient is 0 where the clamp is active
Var log_clamped(const Var& a, double floor);
// Inverted dropout: zero with probability rate, scale survivors by
// 1/(1-rate). rate == 0 or rng == nullptr returns a unchanged.
Var dropout(const Var& a, double rate, std::mt19937_64* rng);

// ---- reductions / normalization ----
Var sum_all(const Var& a);   // 1x1
Var mean_all(const Var& a);  // 1x1
// Row-wise softmax. mask (same shape, 0/1) excludes keys: masked logits are
// shifted by -1e9. A fully masked row throws.
Var softmax_rows(const Var& a, const Mat* mask = nullptr);
// Divide each row by its sum. Throws when a row sum is not positive.
Var normalize_rows(const Var& a);
// Elementwise max over same-shaped inputs; gradient goes to the first argmax.
Var maximum(const std::vector<Var>& xs);
// Per-row layer normalization with 1xC gain and bias.
Var layer_norm(const Var& a, const Var& gain, const Var& bias,
               double eps = 1e-5);
// S[r,l] = sum_c w[c] * tanh(A[r,c] + B[l,c]); w is Nx1
Var additive_scores(const Var& a, const Var& b, const Var& w);

}  // namespace cse::ag
