#include "ptune/autodiff.hpp"

#include "ptune/error.hpp"

namespace ptune {

const Tensor& Var::value() const { return tape_->value(*this); }

bool Var::requires_grad() const { return tape_->requires_grad(*this); }

const Tensor* GradientRecord::find(const Tensor& param) const {
  auto it = grads_.find(&param);
  return it == grads_.end() ? nullptr : &it->second;
}

const Tensor& GradientRecord::at(const Tensor& param) const {
  const Tensor* g = find(param);
  if (g == nullptr) throw Error("no gradient recorded for tensor " + shape_string(param.shape()));
  return *g;
}

void GradientRecord::insert(const Tensor& param, Tensor grad) { grads_.insert_or_assign(&param, std::move(grad)); }

Var Tape::param(const Tensor& tensor) {
  auto it = params_.find(&tensor);
  if (it != params_.end()) return Var(this, it->second);
  Node node;
  node.external = &tensor;
  node.requires_grad = tensor.trainable();
  node.op = "param";
  nodes_.push_back(std::move(node));
  params_.emplace(&tensor, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  node.op = "constant";
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor value, bool requires_grad, const char* op, Backward backward) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = requires_grad;
  node.op = op;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
  const Node& n = nodes_[v.index()];
  return n.external != nullptr ? *n.external : n.owned;
}

Tensor& Tape::grad(Var v) {
  Node& n = nodes_[v.index()];
  if (!n.requires_grad) throw Error(std::string("gradient requested for non-differentiable node ") + n.op);
  if (!n.has_adjoint) {
    n.adjoint = Tensor(value(v).shape(), 0.0);
    n.has_adjoint = true;
  }
  return n.adjoint;
}

GradientRecord Tape::backward(Var loss, double seed) {
  GradientRecord record;
  if (loss.index() >= nodes_.size() || &loss.tape() != this) throw Error("loss does not belong to this tape");
  if (value(loss).size() != 1) {
    throw DimensionError("backward needs a scalar loss, got " + shape_string(value(loss).shape()));
  }
  for (Node& n : nodes_) {
    n.has_adjoint = false;
    n.adjoint = Tensor();
  }
  if (!nodes_[loss.index()].requires_grad) return record;

  grad(loss)[0] = seed;
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.has_adjoint || !n.backward) continue;
    // Callbacks only touch earlier nodes, so `nodes_` is never resized here.
    n.backward(*this, n.adjoint);
  }
  for (const auto& [tensor, index] : params_) {
    Node& n = nodes_[index];
    if (!n.requires_grad) continue;
    record.insert(*tensor, n.has_adjoint ? n.adjoint : Tensor(tensor->shape(), 0.0));
  }
  return record;
}

}  // namespace ptune
