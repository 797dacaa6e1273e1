#include "gcnn/tape.hpp"

namespace gcnn {

template <class T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  Node n;
  n.op = "param:" + p.name;
  n.value = p.value;
  n.requires_grad = grad_enabled_;
  n.param = grad_enabled_ ? &p : nullptr;
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::vector<Var<T>> inputs,
                       BackwardFn fn) {
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  if (!n.value.all_finite())
    throw NumericError("operation '" + n.op + "' produced a non-finite value");
  for (const auto& in : inputs) {
    if (in.tape() != this) throw UsageError("operation '" + n.op + "' mixes tapes");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

template <class T>
void Tape<T>::backward(Var<T> loss) {
  if (!loss.valid() || loss.tape() != this) throw UsageError("backward on a foreign or empty var");
  Node& root = nodes_[loss.id()];
  if (!root.requires_grad)
    throw UsageError("backward on a detached tensor (no input requires a gradient)");
  if (root.value.size() != 1)
    throw ShapeError("backward expects a scalar loss, got " + shape_str(root.value.shape()));

  for (auto& n : nodes_) n.grad = Tensor<T>();
  backward_order_.clear();
  root.grad = Tensor<T>(root.value.shape(), T{1});

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backward) {
      std::vector<Tensor<T>*> grad_in(node.inputs.size(), nullptr);
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        Node& in = nodes_[node.inputs[i]];
        if (!in.requires_grad) continue;
        if (in.grad.empty()) in.grad = Tensor<T>::zeros_like(in.value);
        grad_in[i] = &in.grad;
      }
      node.backward(node.grad, grad_in);
      backward_order_.push_back(id);
    }
    if (node.param != nullptr) {
      Parameter<T>& p = *node.param;
      if (p.grad.shape() != p.value.shape()) p.zero_grad();
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += node.grad[i];
    }
  }
}

template <class T>
void Tape<T>::clear() {
  nodes_.clear();
  backward_order_.clear();
  kink_signature_ = 0xcbf29ce484222325ULL;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace gcnn
