#include <doctest.h>

#include <cmath>
#include <complex>

#include "fcx/afno/model.hpp"
#include "fcx/flowwarp/warp.hpp"

using namespace fcx;
using cd = std::complex<double>;

namespace {

ArchConfig small_arch() {
    ArchConfig a;
    a.grid_h = 8;
    a.grid_w = 16;
    a.channels = 2;
    a.patch = 2;
    a.embed_dim = 8;
    a.depth = 2;
    a.spectral_blocks = 2;
    return a;
}

template <typename T>
Tensor<T> randn(Shape s, uint64_t seed, double scale = 1.0) {
    RngStream r(seed, 0);
    Tensor<T> t(std::move(s));
    for (auto& v : t.vec()) v = static_cast<T>(scale * r.next_normal());
    return t;
}

template <typename T>
void perturb(ParamSet<T>& p, uint64_t seed, double scale) {
    RngStream r(seed, 0);
    for (auto& t : p) {
        for (auto& v : t.value.vec()) v += static_cast<T>(scale * r.next_normal());
    }
}

nn::Mat<double> random_tokens(int64_t rows, int64_t cols, uint64_t seed) {
    RngStream r(seed, 0);
    nn::Mat<double> m(rows, cols);
    for (int64_t i = 0; i < rows; ++i) {
        for (int64_t j = 0; j < cols; ++j) m(i, j) = r.next_normal();
    }
    return m;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x))); }
double shrink(double x, double l) { return x > l ? x - l : (x < -l ? x + l : 0.0); }

/// Reference spectral filter: naive complex DFTs and explicit per-mode
/// block MLPs on one sample.
nn::Mat<double> reference_filter(const ArchConfig& a, const ParamSet<double>& p, const nn::Mat<double>& u) {
    const int64_t h = a.tokens_h(), w = a.tokens_w(), D = a.embed_dim, nb = a.spectral_blocks, s = D / nb;
    const int64_t wf = w / 2 + 1;
    const double pi = std::acos(-1.0);
    const auto& w1 = p.get("blocks.0.filter.w1");
    const auto& b1 = p.get("blocks.0.filter.b1");
    const auto& w2 = p.get("blocks.0.filter.w2");
    const auto& b2 = p.get("blocks.0.filter.b2");
    auto W = [&](const Tensor<double>& t, int64_t part, int64_t k, int64_t r, int64_t c) {
        return t[((part * nb + k) * s + r) * s + c];
    };
    auto B = [&](const Tensor<double>& t, int64_t part, int64_t k, int64_t c) { return t[(part * nb + k) * s + c]; };
    std::vector<cd> Y(static_cast<size_t>(h * wf * D));
    for (int64_t k1 = 0; k1 < h; ++k1) {
        for (int64_t k2 = 0; k2 < wf; ++k2) {
            std::vector<cd> X(static_cast<size_t>(D));
            for (int64_t d = 0; d < D; ++d) {
                cd acc = 0;
                for (int64_t i = 0; i < h; ++i) {
                    for (int64_t j = 0; j < w; ++j) {
                        acc += u(i * w + j, d) * std::polar(1.0, -2 * pi * (double(k1 * i) / h + double(k2 * j) / w));
                    }
                }
                X[d] = acc / std::sqrt(double(h * w));
            }
            for (int64_t k = 0; k < nb; ++k) {
                std::vector<cd> hid(static_cast<size_t>(s));
                for (int64_t c = 0; c < s; ++c) {
                    cd acc(B(b1, 0, k, c), B(b1, 1, k, c));
                    for (int64_t r = 0; r < s; ++r) acc += X[k * s + r] * cd(W(w1, 0, k, r, c), W(w1, 1, k, r, c));
                    hid[c] = cd(gelu(acc.real()), gelu(acc.imag()));
                }
                for (int64_t c = 0; c < s; ++c) {
                    cd acc(B(b2, 0, k, c), B(b2, 1, k, c));
                    for (int64_t r = 0; r < s; ++r) acc += hid[r] * cd(W(w2, 0, k, r, c), W(w2, 1, k, r, c));
                    Y[(k1 * wf + k2) * D + k * s + c] = cd(shrink(acc.real(), a.softshrink), shrink(acc.imag(), a.softshrink));
                }
            }
        }
    }
    // Complex inverse along rows, then complex-to-real along columns.
    nn::Mat<double> out(h * w, D);
    for (int64_t d = 0; d < D; ++d) {
        for (int64_t i = 0; i < h; ++i) {
            std::vector<cd> Z(static_cast<size_t>(wf));
            for (int64_t k2 = 0; k2 < wf; ++k2) {
                cd acc = 0;
                for (int64_t k1 = 0; k1 < h; ++k1) acc += Y[(k1 * wf + k2) * D + d] * std::polar(1.0, 2 * pi * double(k1 * i) / h);
                Z[k2] = acc / std::sqrt(double(h));
            }
            for (int64_t j = 0; j < w; ++j) {
                double acc = Z[0].real() + Z[w / 2].real() * ((j % 2) ? -1.0 : 1.0);
                for (int64_t k2 = 1; k2 < w / 2; ++k2) acc += 2.0 * (Z[k2] * std::polar(1.0, 2 * pi * double(k2 * j) / w)).real();
                out(i * w + j, d) = acc / std::sqrt(double(w));
            }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("deep-norm constants") {
    CHECK(deepnorm_alpha(8) == 2.0);
    CHECK(deepnorm_beta(8) == doctest::Approx(0.3535533905932738).epsilon(1e-15));
    CHECK(deepnorm_alpha(1) == doctest::Approx(1.189207115002721).epsilon(1e-15));
    CHECK_THROWS(deepnorm_alpha(0));
    ArchConfig a = small_arch();
    a.norm_mode = NormMode::Pre;
    CHECK(a.residual_alpha() == 1.0);
    a.norm_mode = NormMode::PostDeepNorm;
    CHECK(a.residual_alpha() == doctest::Approx(std::pow(4.0, 0.25)));
}

TEST_CASE("arch validation") {
    ArchConfig a = small_arch();
    CHECK_NOTHROW(a.validate());
    a.patch = 3;
    CHECK_THROWS(a.validate());
    a = small_arch();
    a.spectral_blocks = 3;
    CHECK_THROWS(a.validate());
    a = small_arch();
    a.grid_w = 12;  // 6 tokens: fine; 12/4=3 tokens would be odd
    CHECK_NOTHROW(a.validate());
}

TEST_CASE("patch embedding") {
    ArchConfig a = small_arch();
    a.grid_h = 8;
    a.grid_w = 8;
    a.patch = 4;
    a.channels = 2;
    a.embed_dim = 8;
    const AfnoNet<double> net(a);
    ParamSet<double> zero = build_layout(a).cast<double>();
    const auto x = randn<double>({3, 2, 8, 8}, 1);
    const auto t0 = net.patch_embed(zero, x);
    CHECK(t0.rows() == 3 * 2 * 2);
    CHECK(t0.cols() == 8);
    CHECK(t0.isZero(0.0));

    ParamSet<double> p = zero;
    perturb(p, 2, 1.0);
    const auto base = net.patch_embed(p, x);
    // Perturbing one pixel moves exactly the token of its patch.
    for (int64_t i : {0, 3, 4, 7}) {
        for (int64_t j : {1, 5}) {
            auto y = x;
            y.at(1, 1, i, j) += 1.0;
            const auto moved = net.patch_embed(p, y);
            const int64_t token = (1 * 2 + i / 4) * 2 + j / 4;
            for (int64_t r = 0; r < moved.rows(); ++r) {
                const double diff = (moved.row(r) - base.row(r)).norm();
                if (r == token) {
                    CHECK(diff > 0.0);
                } else {
                    CHECK(diff == 0.0);
                }
            }
        }
    }
    CHECK_THROWS(net.patch_embed(p, randn<double>({1, 2, 8, 6}, 3)));
}

TEST_CASE("orthonormal rfft2 round trip") {
    for (auto [h, w] : {std::pair{4, 8}, std::pair{8, 16}, std::pair{2, 2}, std::pair{6, 4}}) {
        nn::SpectralPlan<double> plan(h, w);
        const auto x = random_tokens(3 * h * w, 5, 7);
        const auto z = plan.rfft2(x, 3);
        CHECK(z.re.rows() == 3 * h * (w / 2 + 1));
        CHECK((plan.irfft2(z, 3) - x).cwiseAbs().maxCoeff() < 1e-12);
        // Orthonormal: Parseval with doubled interior columns.
        double ex = x.squaredNorm(), ez = 0.0;
        for (int64_t r = 0; r < z.re.rows(); ++r) {
            const int64_t k2 = r % (w / 2 + 1);
            const double c = (k2 == 0 || k2 == w / 2) ? 1.0 : 2.0;
            ez += c * (z.re.row(r).squaredNorm() + z.im.row(r).squaredNorm());
        }
        CHECK(ez == doctest::Approx(ex).epsilon(1e-12));
    }
    nn::SpectralPlan<float> fplan(4, 8);
    const nn::Mat<float> xf = random_tokens(32, 3, 8).cast<float>();
    CHECK((fplan.irfft2(fplan.rfft2(xf, 1), 1) - xf).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("spectral filter matches a naive complex oracle") {
    ArchConfig a = small_arch();
    a.depth = 1;
    a.softshrink = 0.05;
    ParamSet<double> p = build_layout(a).cast<double>();
    perturb(p, 4, 0.5);
    const AfnoNet<double> net(a);
    const auto u = random_tokens(a.tokens_h() * a.tokens_w(), a.embed_dim, 5);
    const auto got = net.spectral_filter(p, 0, u, 1);
    const auto want = reference_filter(a, p, u);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("scalar spectral chain on a constant token field") {
    ArchConfig a = small_arch();
    a.embed_dim = 2;
    a.spectral_blocks = 2;  // 1x1 complex weights per block
    a.depth = 1;
    a.softshrink = 0.1;
    ParamSet<double> p = build_layout(a).cast<double>();
    auto& w1 = p.get("blocks.0.filter.w1");  // (2, nb, 1, 1): real parts then imaginary parts
    auto& b1 = p.get("blocks.0.filter.b1");
    auto& w2 = p.get("blocks.0.filter.w2");
    auto& b2 = p.get("blocks.0.filter.b2");
    w1[0] = 0.7;
    w1[2] = -0.4;  // block 0: w1 = 0.7 - 0.4i
    b1[0] = 0.1;
    b1[2] = 0.2;
    w2[0] = 1.5;
    w2[2] = 0.3;  // w2 = 1.5 + 0.3i
    b2[0] = -0.05;
    const AfnoNet<double> net(a);
    const int64_t n = a.tokens_h() * a.tokens_w();
    nn::Mat<double> u = nn::Mat<double>::Zero(n, 2);
    u.col(0).setConstant(0.25);
    const auto out = net.spectral_filter(p, 0, u, 1);
    // Only the DC bin is non-zero: X = 0.25 * sqrt(n).
    const cd X(0.25 * std::sqrt(double(n)), 0.0);
    const cd pre = X * cd(0.7, -0.4) + cd(0.1, 0.2);
    const cd hid(gelu(pre.real()), gelu(pre.imag()));
    const cd o = hid * cd(1.5, 0.3) + cd(-0.05, 0.0);
    const double y_dc = shrink(o.real(), 0.1);
    // Non-DC bins see only the biases: GELU(b1) then w2 and b2, then shrink.
    const cd pre0(0.1, 0.2);
    const cd hid0(gelu(pre0.real()), gelu(pre0.imag()));
    const cd o0 = hid0 * cd(1.5, 0.3) + cd(-0.05, 0.0);
    const double y0 = shrink(o0.real(), 0.1);
    const double y0i = shrink(o0.imag(), 0.1);
    // Bias response is identical on every bin; invert by hand: a delta at
    // token (0, 0) of height sqrt(n) times the bin value, plus the DC excess.
    const int64_t h = a.tokens_h(), w = a.tokens_w();
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            double expect = (y_dc - y0) / std::sqrt(double(n));
            // Constant spectrum y0 + i*y0i on the half grid inverts to a
            // delta at the origin (imaginary parts cancel except on the
            // k2 = 0 / w/2 columns, where they are dropped).
            double delta = 0.0;
            const double pi = std::acos(-1.0);
            for (int64_t k1 = 0; k1 < h; ++k1) {
                for (int64_t k2 = 0; k2 <= w / 2; ++k2) {
                    const cd v(y0, (k2 == 0 || k2 == w / 2) ? 0.0 : y0i);
                    const double c = (k2 == 0 || k2 == w / 2) ? 1.0 : 2.0;
                    delta += c * (v * std::polar(1.0, 2 * pi * (double(k1 * i) / h + double(k2 * j) / w))).real();
                }
            }
            expect += delta / std::sqrt(double(n));
            CHECK(out(i * w + j, 0) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    // The second block has all-zero weights and biases, so its channel is zero.
    CHECK(out.col(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kept-mode truncation zeroes high frequencies") {
    ArchConfig a = small_arch();
    a.depth = 1;
    a.kept_modes = 0.5;
    a.softshrink = 0.0;
    ParamSet<double> p = build_layout(a).cast<double>();
    perturb(p, 6, 0.5);
    const AfnoNet<double> net(a);
    const auto out = net.spectral_filter(p, 0, random_tokens(a.tokens_h() * a.tokens_w(), a.embed_dim, 9), 1);
    nn::SpectralPlan<double> plan(a.tokens_h(), a.tokens_w());
    const auto z = plan.rfft2(out, 1);
    const int64_t wf = a.tokens_w() / 2 + 1;
    for (int64_t r = 0; r < z.re.rows(); ++r) {
        const int64_t k1 = r / wf, k2 = r % wf;
        if (!plan.kept(k1, k2, 0.5)) {
            CHECK(z.re.row(r).cwiseAbs().maxCoeff() < 1e-12);
            CHECK(z.im.row(r).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
    CHECK(plan.kept(0, 0, 0.5));
    CHECK_FALSE(plan.kept(0, a.tokens_w() / 2, 0.5));
}

TEST_CASE("zero sublayers reduce a block to its normalizations") {
    for (NormMode mode : {NormMode::Pre, NormMode::PostPlain, NormMode::PostDeepNorm}) {
        ArchConfig a = small_arch();
        a.norm_mode = mode;
        ParamSet<double> p = build_layout(a).cast<double>();
        for (auto& t : p) {
            if (t.name.find("gain") != std::string::npos) std::fill(t.value.vec().begin(), t.value.vec().end(), 1.0);
        }
        a.softshrink = 0.0;
        const AfnoNet<double> net(a);
        const auto x = random_tokens(2 * a.tokens_h() * a.tokens_w(), a.embed_dim, 3);
        const auto y = net.block(p, 0, x, 2);
        if (mode == NormMode::Pre) {
            CHECK((y - x).cwiseAbs().maxCoeff() == 0.0);
        } else {
            nn::RowVec<double> g = nn::RowVec<double>::Ones(a.embed_dim), b = nn::RowVec<double>::Zero(a.embed_dim);
            const auto want = nn::layer_norm<double>(x, g, b, nullptr);
            CHECK((y - want).cwiseAbs().maxCoeff() < 1e-4);
        }
    }
}

TEST_CASE("fresh models emit exactly zero flow and compose to value plus input") {
    for (FlowMode fm : {FlowMode::Shared2, FlowMode::PerChannel}) {
        for (NormMode nm : {NormMode::Pre, NormMode::PostPlain, NormMode::PostDeepNorm}) {
            ArchConfig a = small_arch();
            a.flow_mode = fm;
            a.norm_mode = nm;
            RngStream rng(1, streams::kInit);
            const ModelParams mp = init_model(a, rng);
            const AfnoNet<float> net(a);
            const auto x = randn<float>({2, 2, 8, 16}, 12, 3.0);
            const auto out = net.forward(mp.params, x);
            CHECK(out.value.shape() == Shape{2, 2, 8, 16});
            CHECK(out.flow.shape() == Shape{2, fm == FlowMode::Shared2 ? 2 : 4, 8, 16});
            for (float v : out.flow.vec()) REQUIRE(v == 0.0f);
            const auto pred = compose_prediction(out.value, x, out.flow, fm);
            for (int64_t k = 0; k < x.size(); ++k) REQUIRE(pred[k] == out.value[k] + x[k]);
        }
    }
    ArchConfig off = small_arch();
    off.flow_mode = FlowMode::None;
    RngStream rng(1, streams::kInit);
    const ModelParams mp = init_model(off, rng);
    CHECK_FALSE(mp.params.contains("flow_head.weight"));
    CHECK(AfnoNet<float>(off).forward(mp.params, randn<float>({1, 2, 8, 16}, 1)).flow.empty());
}

TEST_CASE("initialization values") {
    ArchConfig plain = small_arch();
    plain.norm_mode = NormMode::PostPlain;
    ArchConfig deep = plain;
    deep.norm_mode = NormMode::PostDeepNorm;
    RngStream r1(5, streams::kInit), r2(5, streams::kInit);
    const ModelParams a = init_model(plain, r1);
    const ModelParams b = init_model(deep, r2);
    const auto scaled = deepnorm_scaled_names(deep);
    const float beta = static_cast<float>(deepnorm_beta(deep.depth));
    for (size_t i = 0; i < a.params.count(); ++i) {
        const auto& name = a.params[i].name;
        const bool is_scaled = std::find(scaled.begin(), scaled.end(), name) != scaled.end();
        for (int64_t k = 0; k < a.params[i].value.size(); ++k) {
            const float want = is_scaled ? a.params[i].value[k] * beta : a.params[i].value[k];
            REQUIRE(b.params[i].value[k] == want);
        }
    }
    for (const char* zero : {"embed.pos", "embed.bias", "value_head.bias", "flow_head.weight", "flow_head.bias",
                             "blocks.0.mlp.fc1.bias", "blocks.1.norm2.bias"}) {
        for (float v : a.params.get(zero).vec()) CHECK(v == 0.0f);
    }
    for (float v : a.params.get("blocks.0.norm1.gain").vec()) CHECK(v == 1.0f);
    // Xavier-normal: variance 2 / (fan_in + fan_out).
    const auto& fc1 = a.params.get("blocks.0.mlp.fc1.weight");
    double sq = 0.0;
    for (float v : fc1.vec()) sq += double(v) * v;
    const double var = sq / fc1.size();
    CHECK(var == doctest::Approx(2.0 / (8 + 16)).epsilon(0.35));
    ModelParams pre = a;
    pre.arch.norm_mode = NormMode::Pre;
    CHECK_THROWS(init_deepnorm(pre, 2));
    ModelParams d = b;
    CHECK_THROWS(init_deepnorm(d, 0));
}

TEST_CASE("value head is linear in its weights") {
    ArchConfig a = small_arch();
    RngStream rng(3, streams::kInit);
    ModelParams mp = init_model(a, rng);
    perturb(mp.params, 4, 0.2);
    const AfnoNet<double> net(a);
    ParamSet<double> p = mp.params.cast<double>();
    const auto x = randn<double>({1, 2, 8, 16}, 5);
    const auto v1 = net.forward(p, x).value;
    for (auto* n : {"value_head.weight", "value_head.bias"}) {
        for (auto& v : p.get(n).vec()) v *= 2.0;
    }
    const auto v2 = net.forward(p, x).value;
    for (int64_t k = 0; k < v1.size(); ++k) CHECK(v2[k] == doctest::Approx(2.0 * v1[k]).epsilon(1e-12));
}

TEST_CASE("forward is deterministic and float agrees with double") {
    ArchConfig a = small_arch();
    RngStream rng(8, streams::kInit);
    ModelParams mp = init_model(a, rng);
    perturb(mp.params, 9, 0.1);
    const auto x = randn<float>({2, 2, 8, 16}, 10);
    const AfnoNet<float> nf(a);
    const auto o1 = nf.forward(mp.params, x);
    const auto o2 = nf.forward(mp.params, x);
    CHECK(o1.value == o2.value);
    CHECK(o1.flow == o2.flow);
    const auto od = AfnoNet<double>(a).forward(mp.params.cast<double>(), x.cast<double>());
    for (int64_t k = 0; k < o1.value.size(); ++k) CHECK(std::abs(o1.value[k] - od.value[k]) < 1e-4);
    check_layout(a, mp.params);
    ArchConfig other = a;
    other.depth = 3;
    CHECK_THROWS(check_layout(other, mp.params));
}

TEST_CASE("deep-norm trunk sensitivity stays bounded at initialization") {
    for (int64_t depth : {4, 8, 16}) {
        ArchConfig a;  // desk default grid, D=64
        a.depth = depth;
        RngStream rng(21, streams::kInit);
        const ModelParams mp = init_model(a, rng);
        const ParamSet<double> p = mp.params.cast<double>();
        const AfnoNet<double> net(a);
        const int64_t rows = a.tokens_h() * a.tokens_w();
        for (uint64_t s = 0; s < 3; ++s) {
            const auto x = random_tokens(rows, a.embed_dim, 100 + s);
            const nn::Mat<double> dx = random_tokens(rows, a.embed_dim, 200 + s) * 1e-3;
            const double ratio = (net.trunk(p, x + dx, 1) - net.trunk(p, x, 1)).norm() / dx.norm();
            INFO("depth " << depth << " ratio " << ratio);
            CHECK(ratio >= 0.1);
            CHECK(ratio <= 10.0);
        }
    }
}
