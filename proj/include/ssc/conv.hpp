#pragma once

#include "ssc/tensor.hpp"

namespace ssc {

/// 2-D convolution, channels-last. input (H,W,Ci), kernel (kh,kw,Ci,Co),
/// zero padding `pad`, stride `stride`. Bias is applied by the caller via a
/// broadcast add.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride = 1, int pad = 0) {
    if (input.rank() != 3 || kernel.rank() != 4)
        throw ShapeMismatch("conv2d: expects (H,W,Ci) and (kh,kw,Ci,Co)");
    const int64_t H = input.dim(0), W = input.dim(1), Ci = input.dim(2);
    const int64_t kh = kernel.dim(0), kw = kernel.dim(1), Co = kernel.dim(3);
    if (kernel.dim(2) != Ci) throw ShapeMismatch("conv2d: channel mismatch");
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw ShapeMismatch("conv2d: kernel larger than padded input");
    std::vector<T> out(Ho * Wo * Co, T(0));
    const T* in = input.values().data();
    const T* kn = kernel.values().data();
    for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
            T* orow = out.data() + (oy * Wo + ox) * Co;
            for (int64_t ty = 0; ty < kh; ++ty) {
                const int64_t iy = oy * stride + ty - pad;
                if (iy < 0 || iy >= H) continue;
                for (int64_t tx = 0; tx < kw; ++tx) {
                    const int64_t ix = ox * stride + tx - pad;
                    if (ix < 0 || ix >= W) continue;
                    const T* irow = in + (iy * W + ix) * Ci;
                    const T* ktap = kn + (ty * kw + tx) * Ci * Co;
                    for (int64_t ci = 0; ci < Ci; ++ci) {
                        const T a = irow[ci];
                        const T* krow = ktap + ci * Co;
                        for (int64_t co = 0; co < Co; ++co) orow[co] += a * krow[co];
                    }
                }
            }
        }
    auto in_n = input.node();
    auto k_n = kernel.node();
    return make_op<T>(
        "conv2d", Shape{Ho, Wo, Co}, std::move(out), {input, kernel},
        [in_n, k_n, H, W, Ci, kh, kw, Co, Ho, Wo, stride, pad](Node<T>& self) {
            const T* g = self.grad.data();
            const T* in = in_n->value.data();
            const T* kn = k_n->value.data();
            T* gin = nullptr;
            T* gk = nullptr;
            if (in_n->requires_grad) { in_n->ensure_grad(); gin = in_n->grad.data(); }
            if (k_n->requires_grad) { k_n->ensure_grad(); gk = k_n->grad.data(); }
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    const T* grow = g + (oy * Wo + ox) * Co;
                    for (int64_t ty = 0; ty < kh; ++ty) {
                        const int64_t iy = oy * stride + ty - pad;
                        if (iy < 0 || iy >= H) continue;
                        for (int64_t tx = 0; tx < kw; ++tx) {
                            const int64_t ix = ox * stride + tx - pad;
                            if (ix < 0 || ix >= W) continue;
                            const int64_t ioff = (iy * W + ix) * Ci;
                            const int64_t koff = (ty * kw + tx) * Ci * Co;
                            for (int64_t ci = 0; ci < Ci; ++ci) {
                                const T* krow = kn + koff + ci * Co;
                                T acc = T(0);
                                for (int64_t co = 0; co < Co; ++co) acc += krow[co] * grow[co];
                                if (gin) gin[ioff + ci] += acc;
                                if (gk) {
                                    const T a = in[ioff + ci];
                                    T* gkrow = gk + koff + ci * Co;
                                    for (int64_t co = 0; co < Co; ++co) gkrow[co] += a * grow[co];
                                }
                            }
                        }
                    }
                }
        });
}

/// 3-D convolution, channels-last. input (X,Y,Z,Ci), kernel (kx,ky,kz,Ci,Co).
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, int stride = 1, int pad = 0) {
    if (input.rank() != 4 || kernel.rank() != 5)
        throw ShapeMismatch("conv3d: expects (X,Y,Z,Ci) and (kx,ky,kz,Ci,Co)");
    const int64_t X = input.dim(0), Y = input.dim(1), Z = input.dim(2), Ci = input.dim(3);
    const int64_t kx = kernel.dim(0), ky = kernel.dim(1), kz = kernel.dim(2), Co = kernel.dim(4);
    if (kernel.dim(3) != Ci) throw ShapeMismatch("conv3d: channel mismatch");
    const int64_t Xo = (X + 2 * pad - kx) / stride + 1;
    const int64_t Yo = (Y + 2 * pad - ky) / stride + 1;
    const int64_t Zo = (Z + 2 * pad - kz) / stride + 1;
    if (Xo <= 0 || Yo <= 0 || Zo <= 0) throw ShapeMismatch("conv3d: kernel larger than padded input");
    std::vector<T> out(Xo * Yo * Zo * Co, T(0));
    const T* in = input.values().data();
    const T* kn = kernel.values().data();
    for (int64_t oxp = 0; oxp < Xo; ++oxp)
        for (int64_t oyp = 0; oyp < Yo; ++oyp)
            for (int64_t ozp = 0; ozp < Zo; ++ozp) {
                T* orow = out.data() + ((oxp * Yo + oyp) * Zo + ozp) * Co;
                for (int64_t tx = 0; tx < kx; ++tx) {
                    const int64_t ix = oxp * stride + tx - pad;
                    if (ix < 0 || ix >= X) continue;
                    for (int64_t ty = 0; ty < ky; ++ty) {
                        const int64_t iy = oyp * stride + ty - pad;
                        if (iy < 0 || iy >= Y) continue;
                        for (int64_t tz = 0; tz < kz; ++tz) {
                            const int64_t iz = ozp * stride + tz - pad;
                            if (iz < 0 || iz >= Z) continue;
                            const T* irow = in + ((ix * Y + iy) * Z + iz) * Ci;
                            const T* ktap = kn + ((tx * ky + ty) * kz + tz) * Ci * Co;
                            for (int64_t ci = 0; ci < Ci; ++ci) {
                                const T a = irow[ci];
                                const T* krow = ktap + ci * Co;
                                for (int64_t co = 0; co < Co; ++co) orow[co] += a * krow[co];
                            }
                        }
                    }
                }
            }
    auto in_n = input.node();
    auto k_n = kernel.node();
    return make_op<T>(
        "conv3d", Shape{Xo, Yo, Zo, Co}, std::move(out), {input, kernel},
        [in_n, k_n, X, Y, Z, Ci, kx, ky, kz, Co, Xo, Yo, Zo, stride, pad](Node<T>& self) {
            const T* g = self.grad.data();
            const T* in = in_n->value.data();
            const T* kn = k_n->value.data();
            T* gin = nullptr;
            T* gk = nullptr;
            if (in_n->requires_grad) { in_n->ensure_grad(); gin = in_n->grad.data(); }
            if (k_n->requires_grad) { k_n->ensure_grad(); gk = k_n->grad.data(); }
            for (int64_t oxp = 0; oxp < Xo; ++oxp)
                for (int64_t oyp = 0; oyp < Yo; ++oyp)
                    for (int64_t ozp = 0; ozp < Zo; ++ozp) {
                        const T* grow = g + ((oxp * Yo + oyp) * Zo + ozp) * Co;
                        for (int64_t tx = 0; tx < kx; ++tx) {
                            const int64_t ix = oxp * stride + tx - pad;
                            if (ix < 0 || ix >= X) continue;
                            for (int64_t ty = 0; ty < ky; ++ty) {
                                const int64_t iy = oyp * stride + ty - pad;
                                if (iy < 0 || iy >= Y) continue;
                                for (int64_t tz = 0; tz < kz; ++tz) {
                                    const int64_t iz = ozp * stride + tz - pad;
                                    if (iz < 0 || iz >= Z) continue;
                                    const int64_t ioff = ((ix * Y + iy) * Z + iz) * Ci;
                                    const int64_t koff = ((tx * ky + ty) * kz + tz) * Ci * Co;
                                    for (int64_t ci = 0; ci < Ci; ++ci) {
                                        const T* krow = kn + koff + ci * Co;
                                        T acc = T(0);
                                        for (int64_t co = 0; co < Co; ++co)
                                            acc += krow[co] * grow[co];
                                        if (gin) gin[ioff + ci] += acc;
                                        if (gk) {
                                            const T a = in[ioff + ci];
                                            T* gkrow = gk + koff + ci * Co;
                                            for (int64_t co = 0; co < Co; ++co)
                                                gkrow[co] += a * grow[co];
                                        }
                                    }
                                }
                            }
                        }
                    }
        });
}

} // namespace ssc
