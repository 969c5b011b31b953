#pragma once

#include "fcx/core/arch.hpp"
#include "fcx/core/tensor.hpp"

namespace fcx {

/// Backward bilinear warp: out[b,c,i,j] samples input[b,c] at
/// (i - flow_y, j - flow_x). Columns wrap periodically; rows clamp to the
/// edge. Flow channel 0 is the column (x) displacement and channel 1 the
/// row (y) displacement, in grid cells. A flow with 2C channels warps
/// channel c by flow channels (2c, 2c+1); a 2-channel flow is shared.
template <typename T>
Tensor<T> temporal_warp(const Tensor<T>& input, const Tensor<T>& flow);

/// Gradients of temporal_warp. Either output pointer may be null.
template <typename T>
void temporal_warp_backward(const Tensor<T>& input, const Tensor<T>& flow, const Tensor<T>& grad_out,
                            Tensor<T>* grad_input, Tensor<T>* grad_flow);

/// value + temporal_warp(input, flow), or just value when the flow head is
/// disabled (FlowMode::None, `flow` ignored).
template <typename T>
Tensor<T> compose_prediction(const Tensor<T>& value, const Tensor<T>& input, const Tensor<T>& flow, FlowMode mode);

/// Gradients of compose_prediction w.r.t. value (identity, not returned),
/// input and flow. Either output pointer may be null.
template <typename T>
void compose_prediction_backward(const Tensor<T>& input, const Tensor<T>& flow, FlowMode mode,
                                 const Tensor<T>& grad_out, Tensor<T>* grad_input, Tensor<T>* grad_flow);

}  // namespace fcx
