#include "fcx/flowwarp/warp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fcx {

namespace {

template <typename T>
int64_t check_shapes(const Tensor<T>& input, const Tensor<T>& flow) {
    if (input.rank() != 4 || flow.rank() != 4) throw std::invalid_argument("temporal_warp expects 4-D input and flow");
    const int64_t C = input.dim(1);
    if (flow.dim(0) != input.dim(0) || flow.dim(2) != input.dim(2) || flow.dim(3) != input.dim(3) ||
        (flow.dim(1) != 2 && flow.dim(1) != 2 * C)) {
        throw std::invalid_argument("flow " + shape_str(flow.shape()) + " does not match input " +
                                    shape_str(input.shape()));
    }
    return flow.dim(1) == 2 ? 0 : 2;  // flow channel stride per input channel
}

inline int64_t wrap(int64_t k, int64_t n) {
    k %= n;
    return k < 0 ? k + n : k;
}

inline int64_t clamp(int64_t k, int64_t n) { return k < 0 ? 0 : (k >= n ? n - 1 : k); }

/// Bilinear taps for a sample at (sy, sx).
template <typename T>
struct Taps {
    int64_t y0, y1, x0, x1;
    T ay, ax;

    Taps(T sy, T sx, int64_t H, int64_t W) {
        const T fy = std::floor(sy), fx = std::floor(sx);
        ay = sy - fy;
        ax = sx - fx;
        const auto iy = static_cast<int64_t>(fy), ix = static_cast<int64_t>(fx);
        y0 = clamp(iy, H);
        y1 = clamp(iy + 1, H);
        x0 = wrap(ix, W);
        x1 = wrap(ix + 1, W);
    }
};

}  // namespace

template <typename T>
Tensor<T> temporal_warp(const Tensor<T>& input, const Tensor<T>& flow) {
    const int64_t stride = check_shapes(input, flow);
    const int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    Tensor<T> out(input.shape());
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const int64_t fc = c * stride;
            const T* src = &input.at(b, c, 0, 0);
            for (int64_t i = 0; i < H; ++i) {
                for (int64_t j = 0; j < W; ++j) {
                    const T fx = flow.at(b, fc, i, j), fy = flow.at(b, fc + 1, i, j);
                    const Taps<T> t(static_cast<T>(i) - fy, static_cast<T>(j) - fx, H, W);
                    const T one = T(1);
                    out.at(b, c, i, j) = (one - t.ay) * ((one - t.ax) * src[t.y0 * W + t.x0] + t.ax * src[t.y0 * W + t.x1]) +
                                         t.ay * ((one - t.ax) * src[t.y1 * W + t.x0] + t.ax * src[t.y1 * W + t.x1]);
                }
            }
        }
    }
    return out;
}

template <typename T>
void temporal_warp_backward(const Tensor<T>& input, const Tensor<T>& flow, const Tensor<T>& grad_out,
                            Tensor<T>* grad_input, Tensor<T>* grad_flow) {
    const int64_t stride = check_shapes(input, flow);
    if (grad_out.shape() != input.shape()) throw std::invalid_argument("warp gradient shape mismatch");
    const int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (grad_input) *grad_input = Tensor<T>(input.shape());
    if (grad_flow) *grad_flow = Tensor<T>(flow.shape());
    const T one = T(1);
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const int64_t fc = c * stride;
            const T* src = &input.at(b, c, 0, 0);
            T* gsrc = grad_input ? &grad_input->at(b, c, 0, 0) : nullptr;
            for (int64_t i = 0; i < H; ++i) {
                for (int64_t j = 0; j < W; ++j) {
                    const T g = grad_out.at(b, c, i, j);
                    const T fx = flow.at(b, fc, i, j), fy = flow.at(b, fc + 1, i, j);
                    const Taps<T> t(static_cast<T>(i) - fy, static_cast<T>(j) - fx, H, W);
                    const T v00 = src[t.y0 * W + t.x0], v01 = src[t.y0 * W + t.x1];
                    const T v10 = src[t.y1 * W + t.x0], v11 = src[t.y1 * W + t.x1];
                    if (gsrc) {
                        gsrc[t.y0 * W + t.x0] += g * (one - t.ay) * (one - t.ax);
                        gsrc[t.y0 * W + t.x1] += g * (one - t.ay) * t.ax;
                        gsrc[t.y1 * W + t.x0] += g * t.ay * (one - t.ax);
                        gsrc[t.y1 * W + t.x1] += g * t.ay * t.ax;
                    }
                    if (grad_flow) {
                        // d(sample)/d(sx) and d(sample)/d(sy); sx = j - fx, sy = i - fy.
                        const T dsx = (one - t.ay) * (v01 - v00) + t.ay * (v11 - v10);
                        const T dsy = (one - t.ax) * (v10 - v00) + t.ax * (v11 - v01);
                        grad_flow->at(b, fc, i, j) -= g * dsx;
                        grad_flow->at(b, fc + 1, i, j) -= g * dsy;
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor<T> compose_prediction(const Tensor<T>& value, const Tensor<T>& input, const Tensor<T>& flow, FlowMode mode) {
    if (value.shape() != input.shape()) {
        throw std::invalid_argument("value " + shape_str(value.shape()) + " and input " + shape_str(input.shape()) +
                                    " differ in shape");
    }
    if (mode == FlowMode::None) return value;
    const int64_t expected = mode == FlowMode::Shared2 ? 2 : 2 * input.dim(1);
    if (flow.rank() != 4 || flow.dim(1) != expected) {
        throw std::invalid_argument("flow " + shape_str(flow.shape()) + " does not match flow mode " + to_string(mode));
    }
    Tensor<T> out = temporal_warp(input, flow);
    for (int64_t k = 0; k < out.size(); ++k) out[k] += value[k];
    return out;
}

template <typename T>
void compose_prediction_backward(const Tensor<T>& input, const Tensor<T>& flow, FlowMode mode,
                                 const Tensor<T>& grad_out, Tensor<T>* grad_input, Tensor<T>* grad_flow) {
    if (mode == FlowMode::None) {
        if (grad_input) *grad_input = Tensor<T>(input.shape());
        if (grad_flow) *grad_flow = Tensor<T>();
        return;
    }
    temporal_warp_backward(input, flow, grad_out, grad_input, grad_flow);
}

template Tensor<float> temporal_warp(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> temporal_warp(const Tensor<double>&, const Tensor<double>&);
template void temporal_warp_backward(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, Tensor<float>*,
                                     Tensor<float>*);
template void temporal_warp_backward(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                     Tensor<double>*, Tensor<double>*);
template Tensor<float> compose_prediction(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, FlowMode);
template Tensor<double> compose_prediction(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                           FlowMode);
template void compose_prediction_backward(const Tensor<float>&, const Tensor<float>&, FlowMode, const Tensor<float>&,
                                          Tensor<float>*, Tensor<float>*);
template void compose_prediction_backward(const Tensor<double>&, const Tensor<double>&, FlowMode,
                                          const Tensor<double>&, Tensor<double>*, Tensor<double>*);

}  // namespace fcx
