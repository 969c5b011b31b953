#include "fcx/train/loss.hpp"

#include <stdexcept>

namespace fcx {

template <typename T>
Tensor<T> predict(const AfnoNet<T>& net, const ParamSet<T>& params, const Tensor<T>& input) {
    auto out = net.forward(params, input);
    return compose_prediction(out.value, input, out.flow, net.arch().flow_mode);
}

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    double acc = 0.0;
    for (int64_t k = 0; k < a.size(); ++k) {
        const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

template <typename T>
double training_loss(const AfnoNet<T>& net, const ParamSet<T>& params, const Tensor<T>& input,
                     const Tensor<T>& target, ParamSet<T>* grads) {
    if (input.shape() != target.shape()) {
        throw std::invalid_argument("input " + shape_str(input.shape()) + " and target " + shape_str(target.shape()) +
                                    " differ in shape");
    }
    const FlowMode mode = net.arch().flow_mode;
    if (!grads) return mse(predict(net, params, input), target);

    typename AfnoNet<T>::Tape tape;
    auto out = net.forward(params, input, tape);
    const Tensor<T> pred = compose_prediction(out.value, input, out.flow, mode);
    const double loss = mse(pred, target);

    Tensor<T> dpred(pred.shape());
    const T scale = static_cast<T>(2.0 / static_cast<double>(pred.size()));
    for (int64_t k = 0; k < pred.size(); ++k) dpred[k] = scale * (pred[k] - target[k]);
    Tensor<T> dflow;
    if (mode != FlowMode::None) compose_prediction_backward<T>(input, out.flow, mode, dpred, nullptr, &dflow);
    net.backward(params, tape, dpred, mode != FlowMode::None ? &dflow : nullptr, *grads);
    return loss;
}

template Tensor<float> predict(const AfnoNet<float>&, const ParamSet<float>&, const Tensor<float>&);
template Tensor<double> predict(const AfnoNet<double>&, const ParamSet<double>&, const Tensor<double>&);
template double mse(const Tensor<float>&, const Tensor<float>&);
template double mse(const Tensor<double>&, const Tensor<double>&);
template double training_loss(const AfnoNet<float>&, const ParamSet<float>&, const Tensor<float>&,
                              const Tensor<float>&, ParamSet<float>*);
template double training_loss(const AfnoNet<double>&, const ParamSet<double>&, const Tensor<double>&,
                              const Tensor<double>&, ParamSet<double>*);

}  // namespace fcx
