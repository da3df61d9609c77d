#pragma once

// Define-by-run reverse-mode differentiation over dense tensors.
//
// A Tape records every primitive application whose inputs participate in
// differentiation. Node ids are assigned in creation order, so the tape is
// topologically sorted by construction and backward() is a single reverse
// sweep.

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dcvae/tensor.hpp"

namespace dcvae {

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  // With track_gradients == false, parameters bind as constants and nothing
  // is recorded (inference).
  explicit Tape(bool track_gradients = true) : track_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that does not receive gradients.
  Var constant(Tensor value);
  // Leaf that receives gradients.
  Var variable(Tensor value);
  // Leaf bound to an externally owned parameter. Repeated calls with the
  // same tensor return the same node.
  Var parameter(const Tensor& param);

  Var record(Tensor value, std::vector<int> inputs, Backward backward);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t recorded() const { return recorded_; }

  // Accumulation buffer of node `id`, allocated zeroed on first use.
  std::span<double> grad_buffer(int id);
  // Gradient arriving at node `id` during the reverse sweep (empty if none).
  std::span<const double> incoming(int id) const;

  void backward(Var loss);

  // Gradient of the last backward() w.r.t. `v`; zeros when unreachable.
  Tensor grad(Var v) const;
  // Gradient for a parameter previously bound with parameter(); zeros when
  // the parameter never reached the loss or was never bound.
  Tensor grad_of(const Tensor& param) const;

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    Backward backward;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, int> params_;
  std::size_t recorded_ = 0;
  bool track_ = true;
};

// Primitive operations. Vectors have rank 1, matrices rank 2; "last axis"
// operations act on rows of a matrix.
namespace ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
// Adds vector b[n] to every row of a[m,n].
Var add_row(Var a, Var b);

// Shapes: [m,k]x[k] -> [m], [k]x[k,n] -> [n], [m,k]x[k,n] -> [m,n].
Var matmul(Var a, Var b);
// a * b^T with b of shape [n,k]; a is [k] or [m,k].
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
// W x + b with W [m,k], x [k], b [m].
Var affine(Var w, Var x, Var b);

Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var softmax(Var a);
Var log_softmax(Var a);

Var concat(std::span<const Var> parts);
Var stack(std::span<const Var> rows);
Var lookup(Var table, std::size_t row);
Var rows(Var table, std::span<const std::size_t> indices);
Var gather(Var a, std::span<const std::size_t> flat_indices);
Var sum(Var a);
Var mean(Var a);

// Forward value is table[index]; the backward pass routes the row gradient
// into probs as if the output were sum_i probs[i] * table[i] (straight-through).
Var straight_through(Var probs, Var table, std::size_t index);

// Name-dispatched application for the tensor-only primitives.
Var apply(std::string_view kind, std::span<const Var> inputs);

}  // namespace ops

// Max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)
// with central differences of step eps. `fn` builds a scalar on the given tape
// from variables bound to `point`.
using TapeFunction = std::function<Var(Tape&, std::span<const Var>)>;
double grad_check(const TapeFunction& fn, const std::vector<Tensor>& point, double eps = 1e-5);

}  // namespace dcvae
