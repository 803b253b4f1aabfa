#pragma once

// Tape-based reverse-mode differentiation over dense matrices.
//
// A Graph records every operation in creation order, which is a valid
// topological order, so backward() walks the tape in reverse. Parameters
// enter a graph as leaves that point back at their owning Tensor; gradients
// are kept on the graph until the caller collects or accumulates them, which
// lets several graphs over the same parameters run on different threads.

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dreamnet/rng.hpp"
#include "dreamnet/tensor.hpp"

namespace dreamnet {

class Graph;

struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::span<const double> grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const;
};

class Graph {
 public:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::function<void(Graph&, std::size_t)> backward;
    Tensor* param = nullptr;
    bool requires_grad = false;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // With gradients disabled, parameter leaves do not require gradients and
  // no backward rules are stored (inference).
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }

  Var constant(Tensor value);
  // Leaf bound to a parameter tensor. Repeated calls with the same tensor
  // return the same Var.
  Var parameter(Tensor& param);

  Var record(Tensor value, std::vector<std::size_t> parents,
             std::function<void(Graph&, std::size_t)> backward);

  const Node& node(std::size_t id) const { return nodes_[id]; }
  Node& node(std::size_t id) { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of a node, valid during and after backward().
  std::vector<double>& grad_of(std::size_t id) { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  void backward(Var loss);
  void zero_grad();

  // (parameter, gradient) pairs in leaf-creation order.
  std::vector<std::pair<Tensor*, std::vector<double>>> collect_param_grads() const;
  // Adds this graph's parameter gradients into each parameter's grad buffer.
  void accumulate_param_grads() const;

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> param_ids_;
  bool grad_enabled_ = true;
};

void backward(Var loss);

// ---- operations -----------------------------------------------------------

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// m x n plus a 1 x n row broadcast over rows
Var add_row(Var a, Var row);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var sigmoid(Var a);
Var relu(Var a);
Var tanh(Var a);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var slice_rows(Var a, std::size_t begin, std::size_t count);

Var sum(Var a);
// 1 x n mean over the rows of a
Var mean_rows(Var a);

// Row softmax; columns at index >= valid_cols get weight zero.
Var softmax_rows(Var a);
Var softmax_rows(Var a, std::size_t valid_cols);

// Row-wise layer normalization with learned gain/bias (each 1 x n).
Var layer_norm_rows(Var a, Var gain, Var bias, double eps = 1e-5);

// Inverted dropout; the sampled keep-mask is stored on the node so
// gradients flow only through kept units.
Var dropout(Var a, double rate, Rng& rng);

// Final hidden state (1 x H) of an LSTM run over the rows of `projected`
// (L x 4H, input projection plus bias, gate order i, f, g, o) with recurrent
// weights `w_hh` (H x 4H) and zero initial state. With `reverse` the rows are
// visited last to first. One tape node; backward is full BPTT.
Var lstm_final_state(Var projected, Var w_hh, bool reverse);

// Rows of `table` selected by ids, as an ids.size() x cols matrix.
Var embedding(Var table, std::span<const std::size_t> ids);

// Sum over elements of -[y ln p + (1-y) ln(1-p)] with p clamped to [eps, 1-eps].
Var bce_sum(Var probs, std::span<const double> targets, double eps);

// Mean softmax cross-entropy over (row, class) targets.
Var softmax_cross_entropy(Var logits, std::span<const std::pair<std::size_t, std::size_t>> targets);

// ---- gradient checking ----------------------------------------------------

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every coordinate; otherwise a deterministic evenly spaced subset
  // of at most this many coordinates per parameter tensor.
  std::size_t max_coords_per_tensor = 0;
  // Lower bound on the denominator |analytic| + |numeric|. Central differences
  // cannot resolve gradients below roughly eps_machine * |loss| / eps, so
  // coordinates smaller than this are compared on an absolute scale.
  double min_scale = 1e-8;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// `build` must construct a deterministic scalar loss on the given graph using
// the parameters in `params`.
GradCheckResult grad_check(const std::function<Var(Graph&)>& build, std::span<Tensor* const> params,
                           const GradCheckOptions& options = {});

}  // namespace dreamnet
