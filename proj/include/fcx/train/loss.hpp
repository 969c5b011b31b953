#pragma once

#include "fcx/afno/model.hpp"
#include "fcx/flowwarp/warp.hpp"

namespace fcx {

/// compose_prediction(forward(model, input), input): value plus the warped input.
template <typename T>
Tensor<T> predict(const AfnoNet<T>& net, const ParamSet<T>& params, const Tensor<T>& input);

/// Mean squared error of the composed prediction against `target`,
/// averaged over every element. When `grads` is non-null the parameter
/// gradient is accumulated into it.
template <typename T>
double training_loss(const AfnoNet<T>& net, const ParamSet<T>& params, const Tensor<T>& input,
                     const Tensor<T>& target, ParamSet<T>* grads = nullptr);

/// Mean squared error between two tensors of the same shape.
template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace fcx
