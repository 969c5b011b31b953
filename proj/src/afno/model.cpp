#include "fcx/afno/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fcx {

using nn::CMatMap;
using nn::CVecMap;
using nn::MatMap;
using nn::VecMap;

namespace {

std::string block_prefix(int64_t n) { return "blocks." + std::to_string(n) + "."; }

}  // namespace

ParamSet<float> build_layout(const ArchConfig& arch) {
    arch.validate();
    const int64_t C = arch.channels, p = arch.patch, D = arch.embed_dim, Hd = arch.hidden_dim();
    const int64_t nb = arch.spectral_blocks, s = D / nb;
    ParamSet<float> ps;
    ps.add("embed.weight", {C * p * p, D});
    ps.add("embed.bias", {D});
    ps.add("embed.pos", {arch.tokens_h(), arch.tokens_w(), D});
    for (int64_t n = 0; n < arch.depth; ++n) {
        const auto pre = block_prefix(n);
        ps.add(pre + "norm1.gain", {D});
        ps.add(pre + "norm1.bias", {D});
        ps.add(pre + "filter.w1", {2, nb, s, s});
        ps.add(pre + "filter.b1", {2, nb, s});
        ps.add(pre + "filter.w2", {2, nb, s, s});
        ps.add(pre + "filter.b2", {2, nb, s});
        ps.add(pre + "norm2.gain", {D});
        ps.add(pre + "norm2.bias", {D});
        ps.add(pre + "mlp.fc1.weight", {D, Hd});
        ps.add(pre + "mlp.fc1.bias", {Hd});
        ps.add(pre + "mlp.fc2.weight", {Hd, D});
        ps.add(pre + "mlp.fc2.bias", {D});
    }
    if (arch.norm_mode == NormMode::Pre) {
        ps.add("final_norm.gain", {D});
        ps.add("final_norm.bias", {D});
    }
    ps.add("value_head.weight", {D, p * p * C});
    ps.add("value_head.bias", {p * p * C});
    if (arch.flow_mode != FlowMode::None) {
        ps.add("flow_head.weight", {D, p * p * arch.flow_channels()});
        ps.add("flow_head.bias", {p * p * arch.flow_channels()});
    }
    return ps;
}

template <typename T>
void check_layout(const ArchConfig& arch, const ParamSet<T>& params) {
    const auto layout = build_layout(arch);
    if (layout.count() != params.count()) {
        throw std::invalid_argument("parameter count " + std::to_string(params.count()) + " does not match arch (" +
                                    std::to_string(layout.count()) + ")");
    }
    for (size_t k = 0; k < layout.count(); ++k) {
        if (layout[k].name != params[k].name || layout[k].value.shape() != params[k].value.shape()) {
            throw std::invalid_argument("parameter " + params[k].name + " " + shape_str(params[k].value.shape()) +
                                        " does not match arch entry " + layout[k].name + " " +
                                        shape_str(layout[k].value.shape()));
        }
    }
}

template void check_layout<float>(const ArchConfig&, const ParamSet<float>&);
template void check_layout<double>(const ArchConfig&, const ParamSet<double>&);

std::vector<std::string> deepnorm_scaled_names(const ArchConfig& arch) {
    std::vector<std::string> names;
    for (int64_t n = 0; n < arch.depth; ++n) {
        const auto pre = block_prefix(n);
        names.push_back(pre + "filter.w1");
        names.push_back(pre + "filter.w2");
        names.push_back(pre + "mlp.fc1.weight");
        names.push_back(pre + "mlp.fc2.weight");
    }
    names.push_back("value_head.weight");
    if (arch.flow_mode != FlowMode::None) names.push_back("flow_head.weight");
    return names;
}

void init_deepnorm(ModelParams& params, int64_t depth) {
    if (depth < 1) throw std::invalid_argument("init_deepnorm: depth must be >= 1");
    if (params.arch.norm_mode != NormMode::PostDeepNorm) {
        throw std::invalid_argument("init_deepnorm requires norm_mode post_deepnorm");
    }
    const auto beta = static_cast<float>(deepnorm_beta(depth));
    for (const auto& name : deepnorm_scaled_names(params.arch)) {
        for (float& v : params.params.get(name).vec()) v *= beta;
    }
}

ModelParams init_model(const ArchConfig& arch, RngStream& rng) {
    ModelParams mp{arch, build_layout(arch)};
    for (auto& p : mp.params) {
        auto& v = p.value.vec();
        const auto& name = p.name;
        if (name.ends_with(".gain")) {
            std::fill(v.begin(), v.end(), 1.0f);
        } else if (name.starts_with("flow_head.") || name == "embed.pos" || name.ends_with(".bias")) {
            std::fill(v.begin(), v.end(), 0.0f);
        } else if (name.find(".filter.") != std::string::npos) {
            for (float& x : v) x = static_cast<float>(0.02 * rng.next_normal());
        } else {
            const auto fan_in = static_cast<double>(p.value.dim(0)), fan_out = static_cast<double>(p.value.dim(1));
            const double sd = std::sqrt(2.0 / (fan_in + fan_out));
            for (float& x : v) x = static_cast<float>(sd * rng.next_normal());
        }
    }
    if (arch.norm_mode == NormMode::PostDeepNorm) init_deepnorm(mp, arch.depth);
    return mp;
}

template <typename T>
AfnoNet<T>::AfnoNet(ArchConfig arch)
    : arch_((arch.validate(), arch)),
      plan_(arch_.tokens_h(), arch_.tokens_w()),
      alpha_(static_cast<T>(arch_.residual_alpha())) {
    const auto layout = build_layout(arch_);
    embed_w_ = layout.index_of("embed.weight");
    embed_b_ = layout.index_of("embed.bias");
    embed_pos_ = layout.index_of("embed.pos");
    for (int64_t n = 0; n < arch_.depth; ++n) {
        const auto pre = block_prefix(n);
        blocks_.push_back({layout.index_of(pre + "norm1.gain"), layout.index_of(pre + "norm1.bias"),
                           layout.index_of(pre + "filter.w1"), layout.index_of(pre + "filter.b1"),
                           layout.index_of(pre + "filter.w2"), layout.index_of(pre + "filter.b2"),
                           layout.index_of(pre + "norm2.gain"), layout.index_of(pre + "norm2.bias"),
                           layout.index_of(pre + "mlp.fc1.weight"), layout.index_of(pre + "mlp.fc1.bias"),
                           layout.index_of(pre + "mlp.fc2.weight"), layout.index_of(pre + "mlp.fc2.bias")});
    }
    if (arch_.norm_mode == NormMode::Pre) {
        final_gain_ = layout.index_of("final_norm.gain");
        final_bias_ = layout.index_of("final_norm.bias");
    }
    value_w_ = layout.index_of("value_head.weight");
    value_b_ = layout.index_of("value_head.bias");
    if (arch_.flow_mode != FlowMode::None) {
        flow_w_ = layout.index_of("flow_head.weight");
        flow_b_ = layout.index_of("flow_head.bias");
    }
    for (int64_t k1 = 0; k1 < plan_.h(); ++k1) {
        for (int64_t k2 = 0; k2 < plan_.wf(); ++k2) kept_rows_.push_back(plan_.kept(k1, k2, arch_.kept_modes) ? 1 : 0);
    }
}

namespace {

template <typename T>
CMatMap<T> as_mat(const Tensor<T>& t, int64_t rows, int64_t cols) {
    return CMatMap<T>(t.ptr(), rows, cols);
}
template <typename T>
MatMap<T> as_mat(Tensor<T>& t, int64_t rows, int64_t cols) {
    return MatMap<T>(t.ptr(), rows, cols);
}
template <typename T>
CVecMap<T> as_vec(const Tensor<T>& t) {
    return CVecMap<T>(t.ptr(), t.size());
}
template <typename T>
VecMap<T> as_vec(Tensor<T>& t) {
    return VecMap<T>(t.ptr(), t.size());
}

}  // namespace

template <typename T>
typename AfnoNet<T>::Mat AfnoNet<T>::patchify(const Tensor<T>& x) const {
    const int64_t B = x.dim(0), C = x.dim(1), p = arch_.patch, th = arch_.tokens_h(), tw = arch_.tokens_w();
    Mat out(B * th * tw, C * p * p);
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t i = 0; i < th; ++i) {
            for (int64_t j = 0; j < tw; ++j) {
                T* row = out.data() + ((b * th + i) * tw + j) * C * p * p;
                for (int64_t c = 0; c < C; ++c) {
                    for (int64_t u = 0; u < p; ++u) {
                        const T* src = &x.at(b, c, i * p + u, j * p);
                        std::copy(src, src + p, row + (c * p + u) * p);
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> AfnoNet<T>::unpatchify(const Mat& m, int64_t batch, int64_t channels) const {
    const int64_t p = arch_.patch, th = arch_.tokens_h(), tw = arch_.tokens_w();
    Tensor<T> out({batch, channels, arch_.grid_h, arch_.grid_w});
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t i = 0; i < th; ++i) {
            for (int64_t j = 0; j < tw; ++j) {
                const T* row = m.data() + ((b * th + i) * tw + j) * channels * p * p;
                for (int64_t c = 0; c < channels; ++c) {
                    for (int64_t u = 0; u < p; ++u) {
                        std::copy(row + (c * p + u) * p, row + (c * p + u + 1) * p, &out.at(b, c, i * p + u, j * p));
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
typename AfnoNet<T>::Mat AfnoNet<T>::run_spectral(const ParamSet<T>& params, const BlockIdx& idx, const Mat& u,
                                                  int64_t batch, SpectralTape* tape) const {
    const int64_t nb = arch_.spectral_blocks, s = arch_.embed_dim / nb;
    const T lambda = static_cast<T>(arch_.softshrink);
    const T* w1 = params[idx.w1].value.ptr();
    const T* b1 = params[idx.b1].value.ptr();
    const T* w2 = params[idx.w2].value.ptr();
    const T* b2 = params[idx.b2].value.ptr();

    nn::CMat<T> z = plan_.rfft2(u, batch);
    const int64_t rows = z.re.rows();
    nn::CMat<T> y{Mat(rows, u.cols()), Mat(rows, u.cols())};
    if (tape) {
        for (auto* v : {&tape->hpre_re, &tape->hpre_im, &tape->h_re, &tape->h_im, &tape->o_re, &tape->o_im}) {
            v->resize(static_cast<size_t>(nb));
        }
    }
    for (int64_t k = 0; k < nb; ++k) {
        CMatMap<T> w1r(w1 + k * s * s, s, s), w1i(w1 + (nb + k) * s * s, s, s);
        CMatMap<T> w2r(w2 + k * s * s, s, s), w2i(w2 + (nb + k) * s * s, s, s);
        CVecMap<T> b1r(b1 + k * s, s), b1i(b1 + (nb + k) * s, s);
        CVecMap<T> b2r(b2 + k * s, s), b2i(b2 + (nb + k) * s, s);
        const auto zr = z.re.middleCols(k * s, s);
        const auto zi = z.im.middleCols(k * s, s);

        Mat hpre_r(rows, s), hpre_i(rows, s);
        hpre_r.noalias() = zr * w1r;
        hpre_r.noalias() -= zi * w1i;
        hpre_r.rowwise() += b1r;
        hpre_i.noalias() = zr * w1i;
        hpre_i.noalias() += zi * w1r;
        hpre_i.rowwise() += b1i;
        Mat h_r = nn::gelu<T>(hpre_r), h_i = nn::gelu<T>(hpre_i);

        Mat o_r(rows, s), o_i(rows, s);
        o_r.noalias() = h_r * w2r;
        o_r.noalias() -= h_i * w2i;
        o_r.rowwise() += b2r;
        o_i.noalias() = h_r * w2i;
        o_i.noalias() += h_i * w2r;
        o_i.rowwise() += b2i;
        y.re.middleCols(k * s, s) = nn::softshrink<T>(o_r, lambda);
        y.im.middleCols(k * s, s) = nn::softshrink<T>(o_i, lambda);

        if (tape) {
            const auto kk = static_cast<size_t>(k);
            tape->hpre_re[kk] = std::move(hpre_r);
            tape->hpre_im[kk] = std::move(hpre_i);
            tape->h_re[kk] = std::move(h_r);
            tape->h_im[kk] = std::move(h_i);
            tape->o_re[kk] = std::move(o_r);
            tape->o_im[kk] = std::move(o_i);
        }
    }
    if (arch_.kept_modes < 1.0) {
        const auto per = static_cast<int64_t>(kept_rows_.size());
        for (int64_t r = 0; r < rows; ++r) {
            if (!kept_rows_[static_cast<size_t>(r % per)]) {
                y.re.row(r).setZero();
                y.im.row(r).setZero();
            }
        }
    }
    if (tape) tape->z = std::move(z);
    return plan_.irfft2(y, batch);
}

template <typename T>
typename AfnoNet<T>::Mat AfnoNet<T>::spectral_backward(const ParamSet<T>& params, const BlockIdx& idx,
                                                       const SpectralTape& tape, const Mat& df, int64_t batch,
                                                       ParamSet<T>& grads) const {
    const int64_t nb = arch_.spectral_blocks, s = arch_.embed_dim / nb;
    const T lambda = static_cast<T>(arch_.softshrink);
    const T* w1 = params[idx.w1].value.ptr();
    const T* w2 = params[idx.w2].value.ptr();
    T* gw1 = grads[idx.w1].value.ptr();
    T* gb1 = grads[idx.b1].value.ptr();
    T* gw2 = grads[idx.w2].value.ptr();
    T* gb2 = grads[idx.b2].value.ptr();

    nn::CMat<T> dy = plan_.irfft2_adjoint(df, batch);
    const int64_t rows = dy.re.rows();
    if (arch_.kept_modes < 1.0) {
        const auto per = static_cast<int64_t>(kept_rows_.size());
        for (int64_t r = 0; r < rows; ++r) {
            if (!kept_rows_[static_cast<size_t>(r % per)]) {
                dy.re.row(r).setZero();
                dy.im.row(r).setZero();
            }
        }
    }
    nn::CMat<T> dz{Mat(rows, df.cols()), Mat(rows, df.cols())};
    for (int64_t k = 0; k < nb; ++k) {
        const auto kk = static_cast<size_t>(k);
        CMatMap<T> w1r(w1 + k * s * s, s, s), w1i(w1 + (nb + k) * s * s, s, s);
        CMatMap<T> w2r(w2 + k * s * s, s, s), w2i(w2 + (nb + k) * s * s, s, s);
        MatMap<T> gw1r(gw1 + k * s * s, s, s), gw1i(gw1 + (nb + k) * s * s, s, s);
        MatMap<T> gw2r(gw2 + k * s * s, s, s), gw2i(gw2 + (nb + k) * s * s, s, s);
        VecMap<T> gb1r(gb1 + k * s, s), gb1i(gb1 + (nb + k) * s, s);
        VecMap<T> gb2r(gb2 + k * s, s), gb2i(gb2 + (nb + k) * s, s);

        const Mat do_r = nn::softshrink_backward<T>(tape.o_re[kk], dy.re.middleCols(k * s, s), lambda);
        const Mat do_i = nn::softshrink_backward<T>(tape.o_im[kk], dy.im.middleCols(k * s, s), lambda);
        const Mat& h_r = tape.h_re[kk];
        const Mat& h_i = tape.h_im[kk];
        gw2r.noalias() += h_r.transpose() * do_r;
        gw2r.noalias() += h_i.transpose() * do_i;
        gw2i.noalias() -= h_i.transpose() * do_r;
        gw2i.noalias() += h_r.transpose() * do_i;
        gb2r += do_r.colwise().sum();
        gb2i += do_i.colwise().sum();

        Mat dh_r(rows, s), dh_i(rows, s);
        dh_r.noalias() = do_r * w2r.transpose();
        dh_r.noalias() += do_i * w2i.transpose();
        dh_i.noalias() = do_i * w2r.transpose();
        dh_i.noalias() -= do_r * w2i.transpose();
        const Mat dp_r = nn::gelu_backward<T>(tape.hpre_re[kk], dh_r);
        const Mat dp_i = nn::gelu_backward<T>(tape.hpre_im[kk], dh_i);

        const auto zr = tape.z.re.middleCols(k * s, s);
        const auto zi = tape.z.im.middleCols(k * s, s);
        gw1r.noalias() += zr.transpose() * dp_r;
        gw1r.noalias() += zi.transpose() * dp_i;
        gw1i.noalias() -= zi.transpose() * dp_r;
        gw1i.noalias() += zr.transpose() * dp_i;
        gb1r += dp_r.colwise().sum();
        gb1i += dp_i.colwise().sum();

        auto dzr = dz.re.middleCols(k * s, s);
        auto dzi = dz.im.middleCols(k * s, s);
        dzr.noalias() = dp_r * w1r.transpose();
        dzr.noalias() += dp_i * w1i.transpose();
        dzi.noalias() = dp_i * w1r.transpose();
        dzi.noalias() -= dp_r * w1i.transpose();
    }
    return plan_.rfft2_adjoint(dz, batch);
}

template <typename T>
typename AfnoNet<T>::Mat AfnoNet<T>::run_mlp(const ParamSet<T>& params, const BlockIdx& idx, const Mat& u,
                                             MlpTape* tape) const {
    const int64_t D = arch_.embed_dim, Hd = arch_.hidden_dim();
    Mat hpre = nn::linear<T>(u, as_mat(params[idx.fc1_w].value, D, Hd), as_vec(params[idx.fc1_b].value));
    Mat h = nn::gelu<T>(hpre);
    Mat g = nn::linear<T>(h, as_mat(params[idx.fc2_w].value, Hd, D), as_vec(params[idx.fc2_b].value));
    if (tape) {
        tape->in = u;
        tape->hpre = std::move(hpre);
        tape->h = std::move(h);
    }
    return g;
}

template <typename T>
typename AfnoNet<T>::Mat AfnoNet<T>::mlp_backward(const ParamSet<T>& params, const BlockIdx& idx, const MlpTape& tape,
                                                  const Mat& dg, ParamSet<T>& grads) const {
    const int64_t D = arch_.embed_dim, Hd = arch_.hidden_dim();
    Mat dh = nn::linear_backward<T>(tape.h, as_mat(params[idx.fc2_w].value, Hd, D), dg,
                                    as_mat(grads[idx.fc2_w].value, Hd, D), as_vec(grads[idx.fc2_b].value));
    Mat dhpre = nn::gelu_backward<T>(tape.hpre, dh);
    return nn::linear_backward<T>(tape.in, as_mat(params[idx.fc1_w].value, D, Hd), dhpre,
                                  as_mat(grads[idx.fc1_w].value, D, Hd), as_vec(grads[idx.fc1_b].value));
}

template <typename T>
typename AfnoNet<T>::Mat AfnoNet<T>::run_block(const ParamSet<T>& params, int64_t index, const Mat& x, int64_t batch,
                                               BlockTape* tape) const {
    const BlockIdx& idx = blocks_[static_cast<size_t>(index)];
    const auto g1 = as_vec(params[idx.norm1_gain].value), b1 = as_vec(params[idx.norm1_bias].value);
    const auto g2 = as_vec(params[idx.norm2_gain].value), b2 = as_vec(params[idx.norm2_bias].value);
    if (tape) tape->x = x;
    if (arch_.norm_mode == NormMode::Pre) {
        Mat a = nn::layer_norm<T>(x, g1, b1, tape ? &tape->ln1 : nullptr);
        Mat y = x + run_spectral(params, idx, a, batch, tape ? &tape->spectral : nullptr);
        Mat bn = nn::layer_norm<T>(y, g2, b2, tape ? &tape->ln2 : nullptr);
        Mat z = y + run_mlp(params, idx, bn, tape ? &tape->mlp : nullptr);
        if (tape) {
            tape->f_in = std::move(a);
            tape->y = std::move(y);
        }
        return z;
    }
    Mat s1 = alpha_ * x + run_spectral(params, idx, x, batch, tape ? &tape->spectral : nullptr);
    Mat y = nn::layer_norm<T>(s1, g1, b1, tape ? &tape->ln1 : nullptr);
    Mat s2 = alpha_ * y + run_mlp(params, idx, y, tape ? &tape->mlp : nullptr);
    Mat z = nn::layer_norm<T>(s2, g2, b2, tape ? &tape->ln2 : nullptr);
    if (tape) tape->y = std::move(y);
    return z;
}

template <typename T>
typename AfnoNet<T>::Mat AfnoNet<T>::block_backward(const ParamSet<T>& params, int64_t index, const BlockTape& tape,
                                                    const Mat& dz, int64_t batch, ParamSet<T>& grads) const {
    const BlockIdx& idx = blocks_[static_cast<size_t>(index)];
    const auto g1 = as_vec(params[idx.norm1_gain].value);
    const auto g2 = as_vec(params[idx.norm2_gain].value);
    auto dg1 = as_vec(grads[idx.norm1_gain].value), db1 = as_vec(grads[idx.norm1_bias].value);
    auto dg2 = as_vec(grads[idx.norm2_gain].value), db2 = as_vec(grads[idx.norm2_bias].value);
    if (arch_.norm_mode == NormMode::Pre) {
        Mat dbn = mlp_backward(params, idx, tape.mlp, dz, grads);
        Mat dy = dz + nn::layer_norm_backward<T>(tape.ln2, g2, dbn, dg2, db2);
        Mat da = spectral_backward(params, idx, tape.spectral, dy, batch, grads);
        return dy + nn::layer_norm_backward<T>(tape.ln1, g1, da, dg1, db1);
    }
    Mat ds2 = nn::layer_norm_backward<T>(tape.ln2, g2, dz, dg2, db2);
    Mat dy = alpha_ * ds2 + mlp_backward(params, idx, tape.mlp, ds2, grads);
    Mat ds1 = nn::layer_norm_backward<T>(tape.ln1, g1, dy, dg1, db1);
    return alpha_ * ds1 + spectral_backward(params, idx, tape.spectral, ds1, batch, grads);
}

template <typename T>
ModelOutput<T> AfnoNet<T>::run(const ParamSet<T>& params, const Tensor<T>& x, Tape* tape) const {
    check_layout(arch_, params);
    if (x.rank() != 4 || x.dim(1) != arch_.channels || x.dim(2) != arch_.grid_h || x.dim(3) != arch_.grid_w) {
        throw std::invalid_argument("model input " + shape_str(x.shape()) + " does not match arch (B, " +
                                    std::to_string(arch_.channels) + ", " + std::to_string(arch_.grid_h) + ", " +
                                    std::to_string(arch_.grid_w) + ")");
    }
    const int64_t B = x.dim(0), D = arch_.embed_dim, C = arch_.channels, p = arch_.patch;
    const int64_t nt = arch_.tokens_h() * arch_.tokens_w();
    Mat patches = patchify(x);
    Mat tokens = nn::linear<T>(patches, as_mat(params[embed_w_].value, C * p * p, D), as_vec(params[embed_b_].value));
    const auto pos = as_mat(params[embed_pos_].value, nt, D);
    for (int64_t b = 0; b < B; ++b) tokens.middleRows(b * nt, nt) += pos;
    if (tape) {
        tape->batch = B;
        tape->patches = std::move(patches);
        tape->blocks.resize(static_cast<size_t>(arch_.depth));
    }
    for (int64_t n = 0; n < arch_.depth; ++n) {
        tokens = run_block(params, n, tokens, B, tape ? &tape->blocks[static_cast<size_t>(n)] : nullptr);
    }
    if (arch_.norm_mode == NormMode::Pre) {
        tokens = nn::layer_norm<T>(tokens, as_vec(params[final_gain_].value), as_vec(params[final_bias_].value),
                                   tape ? &tape->final_ln : nullptr);
    }
    ModelOutput<T> out;
    out.value = unpatchify(
        nn::linear<T>(tokens, as_mat(params[value_w_].value, D, p * p * C), as_vec(params[value_b_].value)), B, C);
    if (arch_.flow_mode != FlowMode::None) {
        const int64_t F = arch_.flow_channels();
        out.flow = unpatchify(
            nn::linear<T>(tokens, as_mat(params[flow_w_].value, D, p * p * F), as_vec(params[flow_b_].value)), B, F);
    }
    if (tape) tape->features = std::move(tokens);
    return out;
}

template <typename T>
ModelOutput<T> AfnoNet<T>::forward(const ParamSet<T>& params, const Tensor<T>& x) const {
    return run(params, x, nullptr);
}

template <typename T>
ModelOutput<T> AfnoNet<T>::forward(const ParamSet<T>& params, const Tensor<T>& x, Tape& tape) const {
    return run(params, x, &tape);
}

template <typename T>
void AfnoNet<T>::backward(const ParamSet<T>& params, const Tape& tape, const Tensor<T>& dvalue, const Tensor<T>* dflow,
                          ParamSet<T>& grads) const {
    check_layout(arch_, params);
    check_layout(arch_, grads);
    const int64_t B = tape.batch, D = arch_.embed_dim, C = arch_.channels, p = arch_.patch;
    const int64_t nt = arch_.tokens_h() * arch_.tokens_w();

    Mat dfeat = nn::linear_backward<T>(tape.features, as_mat(params[value_w_].value, D, p * p * C), patchify(dvalue),
                                       as_mat(grads[value_w_].value, D, p * p * C), as_vec(grads[value_b_].value));
    if (dflow && arch_.flow_mode != FlowMode::None) {
        const int64_t F = arch_.flow_channels();
        dfeat += nn::linear_backward<T>(tape.features, as_mat(params[flow_w_].value, D, p * p * F), patchify(*dflow),
                                        as_mat(grads[flow_w_].value, D, p * p * F), as_vec(grads[flow_b_].value));
    }
    Mat dtok = std::move(dfeat);
    if (arch_.norm_mode == NormMode::Pre) {
        dtok = nn::layer_norm_backward<T>(tape.final_ln, as_vec(params[final_gain_].value), dtok,
                                          as_vec(grads[final_gain_].value), as_vec(grads[final_bias_].value));
    }
    for (int64_t n = arch_.depth - 1; n >= 0; --n) {
        dtok = block_backward(params, n, tape.blocks[static_cast<size_t>(n)], dtok, B, grads);
    }
    auto dpos = as_mat(grads[embed_pos_].value, nt, D);
    for (int64_t b = 0; b < B; ++b) dpos += dtok.middleRows(b * nt, nt);
    auto dw = as_mat(grads[embed_w_].value, C * p * p, D);
    dw.noalias() += tape.patches.transpose() * dtok;
    as_vec(grads[embed_b_].value) += dtok.colwise().sum();
}

template <typename T>
typename AfnoNet<T>::Mat AfnoNet<T>::patch_embed(const ParamSet<T>& params, const Tensor<T>& x) const {
    const int64_t D = arch_.embed_dim, C = arch_.channels, p = arch_.patch;
    const int64_t nt = arch_.tokens_h() * arch_.tokens_w();
    if (x.rank() != 4 || x.dim(1) != C || x.dim(2) % p || x.dim(3) % p || x.dim(2) != arch_.grid_h ||
        x.dim(3) != arch_.grid_w) {
        throw std::invalid_argument("patch_embed: input " + shape_str(x.shape()) + " is not divisible into " +
                                    std::to_string(p) + "x" + std::to_string(p) + " patches of the configured grid");
    }
    Mat tokens = nn::linear<T>(patchify(x), as_mat(params[embed_w_].value, C * p * p, D), as_vec(params[embed_b_].value));
    const auto pos = as_mat(params[embed_pos_].value, nt, D);
    for (int64_t b = 0; b < x.dim(0); ++b) tokens.middleRows(b * nt, nt) += pos;
    return tokens;
}

template <typename T>
typename AfnoNet<T>::Mat AfnoNet<T>::trunk(const ParamSet<T>& params, const Mat& tokens, int64_t batch) const {
    Mat t = tokens;
    for (int64_t n = 0; n < arch_.depth; ++n) t = run_block(params, n, t, batch, nullptr);
    return t;
}

template <typename T>
typename AfnoNet<T>::Mat AfnoNet<T>::block(const ParamSet<T>& params, int64_t index, const Mat& tokens,
                                           int64_t batch) const {
    return run_block(params, index, tokens, batch, nullptr);
}

template <typename T>
typename AfnoNet<T>::Mat AfnoNet<T>::spectral_filter(const ParamSet<T>& params, int64_t index, const Mat& tokens,
                                                     int64_t batch) const {
    return run_spectral(params, blocks_[static_cast<size_t>(index)], tokens, batch, nullptr);
}

template class AfnoNet<float>;
template class AfnoNet<double>;

}  // namespace fcx
