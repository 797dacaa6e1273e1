#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gcnn/tensor.hpp"

namespace gcnn {

// A named trainable tensor. The gradient accumulates across backward passes
// until zero_grad() is called.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() { grad = Tensor<T>::zeros_like(value); }
};

template <class T>
class Tape;

// Lightweight handle to a value recorded on a tape.
template <class T>
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }

  const Tensor<T>& value() const;
  const Tensor<T>& grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records differentiable operations in execution order and replays them in
// reverse. Node storage is a deque, so references to recorded values stay
// valid while more operations are appended; backward closures rely on that.
template <class T>
class Tape {
 public:
  // grad_in[i] is null when input i does not require a gradient.
  using BackwardFn =
      std::function<void(const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // With gradients disabled, parameters bind as constants and no backward
  // closures are kept (inference).
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> value);
  Var<T> leaf(Tensor<T> value);
  // Leaf bound to a parameter; backward() adds the leaf gradient into p.grad.
  Var<T> parameter(Parameter<T>& p);

  // Records an operation. If no input requires a gradient the node is a
  // constant and fn is dropped.
  Var<T> record(std::string_view op, Tensor<T> value, std::vector<Var<T>> inputs,
                BackwardFn fn);

  void backward(Var<T> loss);
  void clear();

  std::size_t size() const { return nodes_.size(); }
  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor<T>& grad(std::size_t id) const { return nodes_.at(id).grad; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }

  // Node ids whose backward closures ran in the last backward(), in call order.
  const std::vector<std::size_t>& last_backward_order() const { return backward_order_; }

  // Hash over the sign pattern of every leaky-ReLU input seen since clear().
  // Finite-difference checks use it to detect perturbations that cross a kink.
  void note_kink_side(bool positive) {
    kink_signature_ = (kink_signature_ ^ (positive ? 0x9e3779b97f4a7c15ULL : 0x7f4a7c159e3779b9ULL)) *
                      0x100000001b3ULL;
  }
  std::uint64_t kink_signature() const { return kink_signature_; }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(Node node);

  std::deque<Node> nodes_;
  std::vector<std::size_t> backward_order_;
  std::uint64_t kink_signature_ = 0xcbf29ce484222325ULL;
  bool grad_enabled_ = true;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}
template <class T>
const Tensor<T>& Var<T>::grad() const {
  return tape_->grad(id_);
}
template <class T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

}  // namespace gcnn
