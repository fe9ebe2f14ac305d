#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "t2ipal/tensor.hpp"

namespace t2ipal {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recording of matrix-level operations.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward() is a single reverse sweep. Nodes that do
/// not (transitively) depend on a parameter are never visited. A tape serves
/// one forward/backward pass and must not be shared between threads.
class Tape {
 public:
  // Receives the node's own value and adjoint and scatters into its inputs.
  using BackwardFn =
      std::function<void(const Tensor& value, const Tensor& grad_out, Tape& tape)>;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  // Records an operation result. `backward` is dropped when no input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  // Adjoint buffer of `v`, zero-initialised on first use.
  Tensor& grad_buffer(Var v);
  void accumulate(Var v, const Tensor& contribution);

  // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be 1×1.
  void backward(Var loss);

  // Gradient of the last backward() target with respect to `v`
  // (all zeros when `v` received nothing).
  Tensor grad(Var v) const;

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t backward_visits() const noexcept { return backward_visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  void check_owner(Var v) const;

  std::vector<Node> nodes_;
  std::size_t backward_visits_ = 0;
};

/// Differentiable primitives. All operate on rank-2 tensors.
namespace ops {

Var matmul(Var a, Var b);      // a·b
Var matmul_nt(Var a, Var b);   // a·bᵀ
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
Var affine(Var a, double factor, double offset);  // factor·a + offset, elementwise
Var exp(Var a);
Var row_dot(Var a, Var b);     // per-row inner products, n×1
Var mean_rows(Var a);          // column means, 1×k
Var sum(Var a);                // 1×1
Var softmax_rows(Var a, double temperature);
Var normalize_rows(Var a);     // each row scaled to unit L2 norm
Var concat_rows(std::span<const Var> parts);
Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights);

}  // namespace ops

}  // namespace t2ipal
