#pragma once

#include <cstdint>

#include "fcx/afno/layers.hpp"

namespace fcx::nn {

/// Complex matrix as a pair of real matrices.
template <typename T>
struct CMat {
    Mat<T> re;
    Mat<T> im;
};

/// Orthonormal real 2-D DFT over the (rows, cols) token grid of every
/// sample, applied independently to each of the D feature columns.
///
/// Tokens are laid out as rows (b, i, j) of an (B*h*w) x D matrix; the
/// half spectrum as rows (b, k1, k2) of a (B*h*(w/2+1)) x D pair, with
/// k2 in [0, w/2].
template <typename T>
class SpectralPlan {
public:
    SpectralPlan(int64_t h, int64_t w);

    int64_t h() const { return h_; }
    int64_t w() const { return w_; }
    int64_t wf() const { return wf_; }

    CMat<T> rfft2(const Mat<T>& x, int64_t batch) const;
    /// Adjoint of rfft2 as a real-linear map.
    Mat<T> rfft2_adjoint(const CMat<T>& dz, int64_t batch) const;
    /// Inverse of rfft2 for Hermitian spectra; imaginary parts of the
    /// k2 = 0 and k2 = w/2 bins are ignored.
    Mat<T> irfft2(const CMat<T>& z, int64_t batch) const;
    /// Adjoint of irfft2 as a real-linear map.
    CMat<T> irfft2_adjoint(const Mat<T>& dx, int64_t batch) const;

    /// Whether spectrum row (k1, k2) is kept under the given mode fraction.
    bool kept(int64_t k1, int64_t k2, double fraction) const;

private:
    int64_t h_, w_, wf_;
    CMat<T> fw_, fw_adj_;  // (wf x w) forward along w, and its adjoint (w x wf)
    CMat<T> fh_, fh_adj_;  // (h x h)
    CMat<T> gh_, gh_adj_;  // inverse along h
    CMat<T> gw_, gw_adj_;  // (w x wf) complex-to-real along w, and adjoint (wf x w)
};

extern template class SpectralPlan<float>;
extern template class SpectralPlan<double>;

}  // namespace fcx::nn
