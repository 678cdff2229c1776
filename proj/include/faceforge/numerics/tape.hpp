#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "faceforge/numerics/tensor.hpp"

namespace faceforge {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const;
  bool needs_grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records primitive operations in execution order. Creation order is a
// topological order, so backward() simply walks the nodes in reverse.
class Tape {
 public:
  // Called during backward with the node's own id; reads grad(self) and
  // accumulates into the parents' gradient buffers.
  using Backprop = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  // With grad disabled, parameters enter as constants and no closures are kept.
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr, {}); }

  // Leaf bound to a parameter. When the parameter requires grad, backward()
  // adds dLoss/dParam into its grad buffer.
  Var param(Tensor& p) {
    const bool tracked = grad_enabled_ && p.requires_grad();
    return push(Tensor(p.shape(), std::vector<double>(p.values().begin(), p.values().end())), tracked,
                tracked ? &p : nullptr, {});
  }

  // Used by operation implementations. `backprop` is dropped when no parent needs grad.
  Var record(Tensor value, std::initializer_list<Var> parents, Backprop backprop) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backprop));
  }

  Var record(Tensor value, std::span<const Var> parents, Backprop backprop) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owner(p);
      needs = needs || nodes_[p.id_].needs_grad;
    }
    return push(std::move(value), needs, nullptr, needs ? std::move(backprop) : Backprop{});
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }

  // Gradient buffer of a node; empty span for nodes that do not need grad.
  std::span<double> grad(std::size_t id) { return nodes_.at(id).grad; }
  std::span<double> grad(const Var& v) { return grad(v.id_); }

  std::size_t size() const { return nodes_.size(); }

  void backward(const Var& loss) {
    check_owner(loss);
    if (loss.size() != 1) {
      throw UsageError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
    }
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    Node& root = nodes_[loss.id_];
    if (!root.needs_grad) return;
    root.grad[0] = 1.0;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad) continue;
      if (n.backprop) n.backprop(*this, i);
      if (n.sink != nullptr) {
        auto dst = n.sink->grad();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
      }
    }
  }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool needs_grad = false;
    Tensor* sink = nullptr;
    Backprop backprop;
  };

  void check_owner(const Var& v) const {
    if (v.tape_ != this) throw UsageError("variable belongs to a different tape");
  }

  Var push(Tensor value, bool needs, Tensor* sink, Backprop backprop) {
    Node n;
    n.needs_grad = needs;
    if (needs) n.grad.assign(value.size(), 0.0);
    n.value = std::move(value);
    n.sink = sink;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::needs_grad() const { return tape_->needs_grad(id_); }

inline double Var::item() const {
  const Tensor& v = value();
  if (v.size() != 1) throw UsageError("item(): variable is not a scalar");
  return v[0];
}

}  // namespace faceforge
