#pragma once

#include <span>

#include "gcnn/tape.hpp"

namespace gcnn {

enum class Mode { kTrain, kInference };

// Running statistics owned by one batch-norm site.
template <class T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  bool initialized = false;

  explicit BatchNormState(std::size_t channels = 1)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
};

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
};

namespace ops {

// Elementwise, equal shapes only.
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> scale(Var<T> a, T s);
template <class T> Var<T> reshape(Var<T> a, Shape shape);

template <class T> Var<T> sum(Var<T> a);
// Mean of squared differences over every element.
template <class T> Var<T> mse(Var<T> a, Var<T> b);

template <class T> Var<T> matmul(Var<T> a, Var<T> b);
// W[out,in] * x[in] + b[out]; bias may be an invalid Var.
template <class T> Var<T> linear(Var<T> w, Var<T> x, Var<T> b);

template <class T> Var<T> leaky_relu(Var<T> x, T slope);

// Same-size cross-correlation with zero padding. x:[N,C,H,W],
// kernel:[O,C,kh,kw] with odd kh, kw; bias:[O] or invalid.
template <class T> Var<T> conv2d(Var<T> x, Var<T> kernel, Var<T> bias);

template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, Mode mode,
                  const BatchNormOptions& opts = {});

template <class T> Var<T> concat_channels(std::span<const Var<T>> maps);
template <class T> Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count);

}  // namespace ops
}  // namespace gcnn
