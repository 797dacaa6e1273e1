#pragma once

#include <deque>
#include <string>
#include <string_view>

#include "gcnn/ops.hpp"
#include "gcnn/rng.hpp"
#include "gcnn/tape.hpp"

namespace gcnn {

// Owns the named parameters and batch-norm buffers of a model. Elements
// live in deques so layer structs may hold stable pointers to them.
template <class T>
class ParameterStore {
 public:
  struct NamedBatchNorm {
    std::string name;
    BatchNormState<T> state;
  };

  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter<T>& add(std::string name, Tensor<T> value) {
    if (find(name) != nullptr) throw UsageError("duplicate parameter name '" + name + "'");
    params_.push_back(Parameter<T>{std::move(name), std::move(value), {}});
    params_.back().zero_grad();
    return params_.back();
  }

  BatchNormState<T>& add_batch_norm(std::string name, std::size_t channels) {
    bn_.push_back(NamedBatchNorm{std::move(name), BatchNormState<T>(channels)});
    return bn_.back().state;
  }

  Parameter<T>* find(std::string_view name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::deque<Parameter<T>>& parameters() { return params_; }
  const std::deque<Parameter<T>>& parameters() const { return params_; }
  std::deque<NamedBatchNorm>& batch_norms() { return bn_; }
  const std::deque<NamedBatchNorm>& batch_norms() const { return bn_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::deque<Parameter<T>> params_;
  std::deque<NamedBatchNorm> bn_;
};

// Uniform in [-sqrt(3 v), sqrt(3 v)], i.e. zero mean and variance v.
template <class T>
Tensor<T> uniform_tensor(Shape shape, double variance, CounterRng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(3.0 * variance);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace gcnn
