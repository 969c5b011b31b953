#pragma once

#include <memory>
#include <vector>

#include "fcx/afno/layers.hpp"
#include "fcx/afno/spectral.hpp"
#include "fcx/core/params.hpp"
#include "fcx/core/rng.hpp"

namespace fcx {

/// Names and shapes of every parameter for `arch`, zero-filled, in
/// checkpoint order.
ParamSet<float> build_layout(const ArchConfig& arch);

/// Throws unless `params` has exactly the layout of `arch`.
template <typename T>
void check_layout(const ArchConfig& arch, const ParamSet<T>& params);

/// Base initialization: Xavier-normal linear weights, 0.02-scaled normal
/// spectral weights, unit LayerNorm gains, zero biases and positional
/// embedding, and an all-zero flow head. Applies init_deepnorm when the
/// arch uses post_deepnorm residuals.
ModelParams init_model(const ArchConfig& arch, RngStream& rng);

/// Multiplies the residual-branch value weights (spectral MLP, token MLP
/// and both decoder heads) by beta = (8N)^(-1/4).
void init_deepnorm(ModelParams& params, int64_t depth);

/// Parameter names that init_deepnorm scales.
std::vector<std::string> deepnorm_scaled_names(const ArchConfig& arch);

template <typename T>
struct ModelOutput {
    Tensor<T> value;  // (B, C, H, W)
    Tensor<T> flow;   // (B, 2, H, W), (B, 2C, H, W), or empty when the flow head is disabled
};

/// Patch-embedded spectral transformer with value and flow decoder heads.
///
/// Stateless apart from precomputed DFT tables; parameters are passed in,
/// so one instance can serve a frozen teacher and a trained student.
template <typename T>
class AfnoNet {
public:
    using Mat = nn::Mat<T>;

    explicit AfnoNet(ArchConfig arch);

    const ArchConfig& arch() const { return arch_; }

    struct Tape;

    ModelOutput<T> forward(const ParamSet<T>& params, const Tensor<T>& x) const;
    ModelOutput<T> forward(const ParamSet<T>& params, const Tensor<T>& x, Tape& tape) const;

    /// Accumulates parameter gradients into `grads` (same layout as params).
    /// `dflow` may be null when the flow head is disabled or unused.
    void backward(const ParamSet<T>& params, const Tape& tape, const Tensor<T>& dvalue, const Tensor<T>* dflow,
                  ParamSet<T>& grads) const;

    /// Token-level pieces, exposed for tests.
    Mat patch_embed(const ParamSet<T>& params, const Tensor<T>& x) const;
    Mat trunk(const ParamSet<T>& params, const Mat& tokens, int64_t batch) const;
    Mat block(const ParamSet<T>& params, int64_t index, const Mat& tokens, int64_t batch) const;
    Mat spectral_filter(const ParamSet<T>& params, int64_t index, const Mat& tokens, int64_t batch) const;

private:
    struct BlockIdx {
        size_t norm1_gain, norm1_bias, w1, b1, w2, b2, norm2_gain, norm2_bias, fc1_w, fc1_b, fc2_w, fc2_b;
    };
    struct SpectralTape;
    struct MlpTape;
    struct BlockTape;

    Mat run_block(const ParamSet<T>& params, int64_t index, const Mat& x, int64_t batch, BlockTape* tape) const;
    Mat block_backward(const ParamSet<T>& params, int64_t index, const BlockTape& tape, const Mat& dz, int64_t batch,
                       ParamSet<T>& grads) const;
    Mat run_spectral(const ParamSet<T>& params, const BlockIdx& idx, const Mat& u, int64_t batch,
                     SpectralTape* tape) const;
    Mat spectral_backward(const ParamSet<T>& params, const BlockIdx& idx, const SpectralTape& tape, const Mat& df,
                          int64_t batch, ParamSet<T>& grads) const;
    Mat run_mlp(const ParamSet<T>& params, const BlockIdx& idx, const Mat& u, MlpTape* tape) const;
    Mat mlp_backward(const ParamSet<T>& params, const BlockIdx& idx, const MlpTape& tape, const Mat& dg,
                     ParamSet<T>& grads) const;
    ModelOutput<T> run(const ParamSet<T>& params, const Tensor<T>& x, Tape* tape) const;

    Mat patchify(const Tensor<T>& x) const;
    Tensor<T> unpatchify(const Mat& m, int64_t batch, int64_t channels) const;

    ArchConfig arch_;
    nn::SpectralPlan<T> plan_;
    std::vector<uint8_t> kept_rows_;  // per (k1, k2)
    T alpha_;
    size_t embed_w_, embed_b_, embed_pos_;
    std::vector<BlockIdx> blocks_;
    size_t final_gain_ = 0, final_bias_ = 0;
    size_t value_w_, value_b_;
    size_t flow_w_ = 0, flow_b_ = 0;
};

template <typename T>
struct AfnoNet<T>::SpectralTape {
    nn::CMat<T> z;
    std::vector<Mat> hpre_re, hpre_im, h_re, h_im, o_re, o_im;  // per spectral block
};

template <typename T>
struct AfnoNet<T>::MlpTape {
    Mat in, hpre, h;
};

template <typename T>
struct AfnoNet<T>::BlockTape {
    Mat x;         // block input
    Mat f_in;      // spectral input (LN1(x) for pre-norm, x otherwise)
    nn::LayerNormCache<T> ln1, ln2;
    SpectralTape spectral;
    Mat y;         // between the two sublayers
    MlpTape mlp;
};

template <typename T>
struct AfnoNet<T>::Tape {
    int64_t batch = 0;
    Mat patches;
    std::vector<BlockTape> blocks;
    nn::LayerNormCache<T> final_ln;
    Mat features;  // head input
};

extern template class AfnoNet<float>;
extern template class AfnoNet<double>;

}  // namespace fcx
