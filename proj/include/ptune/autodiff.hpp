#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <vector>

#include "ptune/tensor.hpp"

namespace ptune {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  const Tensor& value() const;
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

// Gradients of trainable leaf tensors, keyed by the address of the tensor
// they belong to. Frozen tensors never get an entry.
class GradientRecord {
 public:
  const Tensor* find(const Tensor& param) const;
  const Tensor& at(const Tensor& param) const;
  bool contains(const Tensor& param) const { return find(param) != nullptr; }
  std::size_t size() const { return grads_.size(); }
  bool empty() const { return grads_.empty(); }

  void insert(const Tensor& param, Tensor grad);

 private:
  std::map<const Tensor*, Tensor> grads_;
};

// Reverse-mode tape. Nodes are appended in evaluation order; backward walks
// them in reverse. A node requires a gradient only if one of its inputs does,
// so subgraphs hanging off frozen tensors never allocate adjoints.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf referencing an external parameter. The tensor must outlive the tape.
  // Repeated calls with the same tensor return the same node.
  Var param(const Tensor& tensor);
  // Leaf owning a copy of `value`; never differentiated.
  Var constant(Tensor value);

  Var push(Tensor value, bool requires_grad, const char* op, Backward backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.index()].requires_grad; }
  const char* op_name(Var v) const { return nodes_[v.index()].op; }
  std::size_t size() const { return nodes_.size(); }

  // Adjoint accumulator of a node; allocated (zeroed) on first use. Only
  // valid for nodes that require a gradient.
  Tensor& grad(Var v);

  // Runs reverse accumulation from a scalar node. `seed` scales the initial
  // adjoint. Calling it again re-runs from scratch with identical results.
  GradientRecord backward(Var loss, double seed = 1.0);

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor adjoint;
    bool has_adjoint = false;
    bool requires_grad = false;
    const char* op = "";
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::map<const Tensor*, std::size_t> params_;
};

}  // namespace ptune
