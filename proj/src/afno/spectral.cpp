#include "fcx/afno/spectral.hpp"

#include <cmath>
#include <numbers>

namespace fcx::nn {

namespace {

/// cos and sin of 2 pi m / n, exact at multiples of a quarter turn.
void twiddle(int64_t m, int64_t n, double& c, double& s) {
    m %= n;
    if ((4 * m) % n == 0) {
        static constexpr double kCos[] = {1.0, 0.0, -1.0, 0.0};
        static constexpr double kSin[] = {0.0, 1.0, 0.0, -1.0};
        const auto q = static_cast<size_t>((4 * m) / n);
        c = kCos[q];
        s = kSin[q];
        return;
    }
    const double th = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n);
    c = std::cos(th);
    s = std::sin(th);
}

template <typename T>
CMat<T> adjoint(const CMat<T>& m) {
    return {m.re.transpose(), -m.im.transpose()};
}

/// out_b = M * in_b for each of `batches` contiguous (in_rows x cols) blocks.
/// `in_im` may be null for real input.
template <typename T>
void batched_cmul(const CMat<T>& m, const T* in_re, const T* in_im, T* out_re, T* out_im, int64_t batches,
                  int64_t cols) {
    const int64_t in_rows = m.re.cols(), out_rows = m.re.rows();
    for (int64_t b = 0; b < batches; ++b) {
        CMatMap<T> xr(in_re + b * in_rows * cols, in_rows, cols);
        MatMap<T> yr(out_re + b * out_rows * cols, out_rows, cols);
        if (in_im) {
            CMatMap<T> xi(in_im + b * in_rows * cols, in_rows, cols);
            yr.noalias() = m.re * xr;
            yr.noalias() -= m.im * xi;
            if (out_im) {
                MatMap<T> yi(out_im + b * out_rows * cols, out_rows, cols);
                yi.noalias() = m.re * xi;
                yi.noalias() += m.im * xr;
            }
        } else {
            yr.noalias() = m.re * xr;
            if (out_im) {
                MatMap<T> yi(out_im + b * out_rows * cols, out_rows, cols);
                yi.noalias() = m.im * xr;
            }
        }
    }
}

}  // namespace

template <typename T>
SpectralPlan<T>::SpectralPlan(int64_t h, int64_t w) : h_(h), w_(w), wf_(w / 2 + 1) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(h * w));
    fw_ = {Mat<T>(wf_, w_), Mat<T>(wf_, w_)};
    gw_ = {Mat<T>(w_, wf_), Mat<T>(w_, wf_)};
    for (int64_t k = 0; k < wf_; ++k) {
        // Bins other than DC and Nyquist stand for a conjugate pair.
        const double ck = (k == 0 || (w_ % 2 == 0 && k == w_ / 2)) ? 1.0 : 2.0;
        for (int64_t j = 0; j < w_; ++j) {
            double c, s;
            twiddle(k * j, w_, c, s);
            fw_.re(k, j) = static_cast<T>(scale * c);
            fw_.im(k, j) = static_cast<T>(-scale * s);
            gw_.re(j, k) = static_cast<T>(ck * scale * c);
            gw_.im(j, k) = static_cast<T>(ck * scale * s);
        }
    }
    fh_ = {Mat<T>(h_, h_), Mat<T>(h_, h_)};
    gh_ = {Mat<T>(h_, h_), Mat<T>(h_, h_)};
    for (int64_t k = 0; k < h_; ++k) {
        for (int64_t i = 0; i < h_; ++i) {
            double c, s;
            twiddle(k * i, h_, c, s);
            fh_.re(k, i) = static_cast<T>(c);
            fh_.im(k, i) = static_cast<T>(-s);
            gh_.re(i, k) = static_cast<T>(c);
            gh_.im(i, k) = static_cast<T>(s);
        }
    }
    fw_adj_ = adjoint(fw_);
    fh_adj_ = adjoint(fh_);
    gh_adj_ = adjoint(gh_);
    gw_adj_ = adjoint(gw_);
}

template <typename T>
CMat<T> SpectralPlan<T>::rfft2(const Mat<T>& x, int64_t batch) const {
    const int64_t d = x.cols();
    CMat<T> a{Mat<T>(batch * h_ * wf_, d), Mat<T>(batch * h_ * wf_, d)};
    batched_cmul(fw_, x.data(), static_cast<const T*>(nullptr), a.re.data(), a.im.data(), batch * h_, d);
    CMat<T> z{Mat<T>(batch * h_ * wf_, d), Mat<T>(batch * h_ * wf_, d)};
    batched_cmul(fh_, a.re.data(), a.im.data(), z.re.data(), z.im.data(), batch, wf_ * d);
    return z;
}

template <typename T>
Mat<T> SpectralPlan<T>::rfft2_adjoint(const CMat<T>& dz, int64_t batch) const {
    const int64_t d = dz.re.cols();
    CMat<T> da{Mat<T>(batch * h_ * wf_, d), Mat<T>(batch * h_ * wf_, d)};
    batched_cmul(fh_adj_, dz.re.data(), dz.im.data(), da.re.data(), da.im.data(), batch, wf_ * d);
    Mat<T> dx(batch * h_ * w_, d);
    batched_cmul(fw_adj_, da.re.data(), da.im.data(), dx.data(), static_cast<T*>(nullptr), batch * h_, d);
    return dx;
}

template <typename T>
Mat<T> SpectralPlan<T>::irfft2(const CMat<T>& z, int64_t batch) const {
    const int64_t d = z.re.cols();
    CMat<T> b{Mat<T>(batch * h_ * wf_, d), Mat<T>(batch * h_ * wf_, d)};
    batched_cmul(gh_, z.re.data(), z.im.data(), b.re.data(), b.im.data(), batch, wf_ * d);
    Mat<T> x(batch * h_ * w_, d);
    batched_cmul(gw_, b.re.data(), b.im.data(), x.data(), static_cast<T*>(nullptr), batch * h_, d);
    return x;
}

template <typename T>
CMat<T> SpectralPlan<T>::irfft2_adjoint(const Mat<T>& dx, int64_t batch) const {
    const int64_t d = dx.cols();
    CMat<T> db{Mat<T>(batch * h_ * wf_, d), Mat<T>(batch * h_ * wf_, d)};
    batched_cmul(gw_adj_, dx.data(), static_cast<const T*>(nullptr), db.re.data(), db.im.data(), batch * h_, d);
    CMat<T> dz{Mat<T>(batch * h_ * wf_, d), Mat<T>(batch * h_ * wf_, d)};
    batched_cmul(gh_adj_, db.re.data(), db.im.data(), dz.re.data(), dz.im.data(), batch, wf_ * d);
    return dz;
}

template <typename T>
bool SpectralPlan<T>::kept(int64_t k1, int64_t k2, double fraction) const {
    if (fraction >= 1.0) return true;
    const int64_t f1 = k1 <= h_ / 2 ? k1 : h_ - k1;
    return static_cast<double>(f1) <= fraction * static_cast<double>(h_ / 2) &&
           static_cast<double>(k2) <= fraction * static_cast<double>(w_ / 2);
}

template class SpectralPlan<float>;
template class SpectralPlan<double>;

}  // namespace fcx::nn
