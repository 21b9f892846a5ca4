#pragma once

#include "ssc/tensor.hpp"

namespace ssc {

/// Trilinear sampling of a channels-last 3-D volume at continuous coordinates.
/// volume (A,B,D,Ch), coords (M,3) in lattice units of axes 0..2. Lattice
/// points outside the volume contribute zero. Differentiable in both the
/// volume values and the coordinates.
template <typename T>
Tensor<T> sample_trilinear(const Tensor<T>& volume, const Tensor<T>& coords) {
    if (volume.rank() != 4) throw ShapeMismatch("sample_trilinear: volume must be (A,B,D,Ch)");
    if (coords.rank() != 2 || coords.dim(1) != 3)
        throw ShapeMismatch("sample_trilinear: coords must be (M,3)");
    const int64_t A = volume.dim(0), B = volume.dim(1), D = volume.dim(2), Ch = volume.dim(3);
    const int64_t M = coords.dim(0);
    std::vector<T> out(M * Ch, T(0));
    const T* vol = volume.values().data();
    const T* cp = coords.values().data();

    auto corner_off = [&](int64_t a, int64_t b, int64_t d) -> int64_t {
        if (a < 0 || a >= A || b < 0 || b >= B || d < 0 || d >= D) return -1;
        return ((a * B + b) * D + d) * Ch;
    };

    for (int64_t m = 0; m < M; ++m) {
        const T ca = cp[m * 3 + 0], cb = cp[m * 3 + 1], cd = cp[m * 3 + 2];
        const int64_t a0 = static_cast<int64_t>(std::floor(static_cast<double>(ca)));
        const int64_t b0 = static_cast<int64_t>(std::floor(static_cast<double>(cb)));
        const int64_t d0 = static_cast<int64_t>(std::floor(static_cast<double>(cd)));
        const T fa = ca - static_cast<T>(a0), fb = cb - static_cast<T>(b0),
                fd = cd - static_cast<T>(d0);
        T* orow = out.data() + m * Ch;
        for (int ia = 0; ia < 2; ++ia)
            for (int ib = 0; ib < 2; ++ib)
                for (int id = 0; id < 2; ++id) {
                    const int64_t off = corner_off(a0 + ia, b0 + ib, d0 + id);
                    if (off < 0) continue;
                    const T w = (ia ? fa : T(1) - fa) * (ib ? fb : T(1) - fb) *
                                (id ? fd : T(1) - fd);
                    const T* vrow = vol + off;
                    for (int64_t c = 0; c < Ch; ++c) orow[c] += w * vrow[c];
                }
    }

    auto vn = volume.node();
    auto cn = coords.node();
    return make_op<T>(
        "sample_trilinear", Shape{M, Ch}, std::move(out), {volume, coords},
        [vn, cn, A, B, D, Ch, M](Node<T>& self) {
            const T* g = self.grad.data();
            const T* vol = vn->value.data();
            const T* cp = cn->value.data();
            T* gvol = nullptr;
            T* gc = nullptr;
            if (vn->requires_grad) { vn->ensure_grad(); gvol = vn->grad.data(); }
            if (cn->requires_grad) { cn->ensure_grad(); gc = cn->grad.data(); }
            auto corner_off = [&](int64_t a, int64_t b, int64_t d) -> int64_t {
                if (a < 0 || a >= A || b < 0 || b >= B || d < 0 || d >= D) return -1;
                return ((a * B + b) * D + d) * Ch;
            };
            for (int64_t m = 0; m < M; ++m) {
                const T ca = cp[m * 3 + 0], cb = cp[m * 3 + 1], cd = cp[m * 3 + 2];
                const int64_t a0 = static_cast<int64_t>(std::floor(static_cast<double>(ca)));
                const int64_t b0 = static_cast<int64_t>(std::floor(static_cast<double>(cb)));
                const int64_t d0 = static_cast<int64_t>(std::floor(static_cast<double>(cd)));
                const T fa = ca - static_cast<T>(a0), fb = cb - static_cast<T>(b0),
                        fd = cd - static_cast<T>(d0);
                const T* grow = g + m * Ch;
                T dca = T(0), dcb = T(0), dcd = T(0);
                for (int ia = 0; ia < 2; ++ia)
                    for (int ib = 0; ib < 2; ++ib)
                        for (int id = 0; id < 2; ++id) {
                            const int64_t off = corner_off(a0 + ia, b0 + ib, d0 + id);
                            if (off < 0) continue;
                            const T wa = ia ? fa : T(1) - fa;
                            const T wb = ib ? fb : T(1) - fb;
                            const T wd = id ? fd : T(1) - fd;
                            const T w = wa * wb * wd;
                            const T* vrow = vol + off;
                            if (gvol) {
                                T* gvrow = gvol + off;
                                for (int64_t c = 0; c < Ch; ++c) gvrow[c] += w * grow[c];
                            }
                            if (gc) {
                                T dot = T(0);
                                for (int64_t c = 0; c < Ch; ++c) dot += vrow[c] * grow[c];
                                const T sa = ia ? T(1) : T(-1);
                                const T sb = ib ? T(1) : T(-1);
                                const T sd = id ? T(1) : T(-1);
                                dca += sa * wb * wd * dot;
                                dcb += wa * sb * wd * dot;
                                dcd += wa * wb * sd * dot;
                            }
                        }
                if (gc) {
                    gc[m * 3 + 0] += dca;
                    gc[m * 3 + 1] += dcb;
                    gc[m * 3 + 2] += dcd;
                }
            }
        });
}

/// Single-point convenience wrapper; returns a (1,Ch) tensor.
template <typename T>
Tensor<T> sample_trilinear_at(const Tensor<T>& volume, T a, T b, T d) {
    Tensor<T> coord(Shape{1, 3}, std::vector<T>{a, b, d});
    return sample_trilinear(volume, coord);
}

} // namespace ssc
