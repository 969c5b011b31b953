#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace fcx::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const Mat<T>>;
template <typename T>
using VecMap = Eigen::Map<RowVec<T>>;
template <typename T>
using CVecMap = Eigen::Map<const RowVec<T>>;

inline constexpr double kLayerNormEps = 1e-5;

/// y = x W + b
template <typename T, typename X, typename W, typename B>
Mat<T> linear(const X& x, const W& w, const B& b) {
    Mat<T> y(x.rows(), w.cols());
    y.noalias() = x * w;
    y.rowwise() += b;
    return y;
}

/// Accumulates dW += x^T dy and db += colsum(dy); returns dx = dy W^T.
template <typename T, typename X, typename W, typename DY, typename DW, typename DB>
Mat<T> linear_backward(const X& x, const W& w, const DY& dy, DW&& dw, DB&& db) {
    dw.noalias() += x.transpose() * dy;
    db += dy.colwise().sum();
    Mat<T> dx(dy.rows(), w.rows());
    dx.noalias() = dy * w.transpose();
    return dx;
}

template <typename T>
struct LayerNormCache {
    Mat<T> xhat;
    ColVec<T> rstd;
};

template <typename T, typename G, typename B>
Mat<T> layer_norm(const Mat<T>& x, const G& gain, const B& bias, LayerNormCache<T>* cache) {
    const auto d = static_cast<T>(x.cols());
    ColVec<T> mean = x.rowwise().sum() / d;
    Mat<T> xc = x.colwise() - mean;
    ColVec<T> var = xc.array().square().rowwise().sum() / d;
    ColVec<T> rstd = (var.array() + static_cast<T>(kLayerNormEps)).rsqrt();
    Mat<T> xhat = xc.array().colwise() * rstd.array();
    Mat<T> y = (xhat.array().rowwise() * gain.array()).rowwise() + bias.array();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return y;
}

template <typename T, typename G, typename DG, typename DB>
Mat<T> layer_norm_backward(const LayerNormCache<T>& cache, const G& gain, const Mat<T>& dy, DG&& dgain, DB&& dbias) {
    const auto d = static_cast<T>(dy.cols());
    dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    dbias += dy.colwise().sum();
    Mat<T> dxhat = dy.array().rowwise() * gain.array();
    ColVec<T> m1 = dxhat.rowwise().sum() / d;
    ColVec<T> m2 = (dxhat.array() * cache.xhat.array()).rowwise().sum() / d;
    Mat<T> dx = dxhat;
    dx.colwise() -= m1;
    dx.array() -= cache.xhat.array().colwise() * m2.array();
    dx.array().colwise() *= cache.rstd.array();
    return dx;
}

/// tanh-approximated GELU.
template <typename T>
Mat<T> gelu(const Mat<T>& x) {
    const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
    const T a = static_cast<T>(0.044715);
    auto xa = x.array();
    return (static_cast<T>(0.5) * xa * (static_cast<T>(1) + (c * (xa + a * xa.cube())).tanh())).matrix();
}

/// dL/dx given dL/dy and the pre-activation x.
template <typename T>
Mat<T> gelu_backward(const Mat<T>& x, const Mat<T>& dy) {
    const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
    const T a = static_cast<T>(0.044715);
    auto xa = x.array();
    Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> t = (c * (xa + a * xa.cube())).tanh();
    auto dgelu = static_cast<T>(0.5) * (static_cast<T>(1) + t) +
                 static_cast<T>(0.5) * xa * (static_cast<T>(1) - t.square()) * c *
                     (static_cast<T>(1) + static_cast<T>(3) * a * xa.square());
    return (dy.array() * dgelu).matrix();
}

template <typename T>
Mat<T> softshrink(const Mat<T>& x, T lambda) {
    return x.unaryExpr([lambda](T v) { return v > lambda ? v - lambda : (v < -lambda ? v + lambda : T(0)); });
}

template <typename T>
Mat<T> softshrink_backward(const Mat<T>& x, const Mat<T>& dy, T lambda) {
    return dy.binaryExpr(x, [lambda](T g, T v) { return (v > lambda || v < -lambda) ? g : T(0); });
}

}  // namespace fcx::nn
