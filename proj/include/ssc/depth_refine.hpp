#pragma once

#include "ssc/conv.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

/// Windowed single-head attention between pre-projected feature maps.
/// Output at pixel p is softmax-weighted over the in-bounds neighbors inside
/// an odd `window`; borders use the truncated neighborhood, so the result is
/// always a convex combination of value rows.
template <typename T>
Tensor<T> neighborhood_attention_core(const Tensor<T>& q_proj, const Tensor<T>& k_proj,
                                      const Tensor<T>& v_proj, int window) {
    if (q_proj.shape() != k_proj.shape() || q_proj.shape() != v_proj.shape())
        throw ShapeMismatch("neighborhood_attention: maps must share shape");
    if (q_proj.rank() != 3) throw ShapeMismatch("neighborhood_attention: maps must be (H,W,C)");
    if (window < 1 || window % 2 == 0)
        throw ShapeMismatch("neighborhood_attention: window must be odd and >= 1");
    const int64_t h = q_proj.dim(0), w = q_proj.dim(1), c = q_proj.dim(2);
    const int r = (window - 1) / 2;
    const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(c)));

    std::vector<T> out(h * w * c, T(0));
    const T* q = q_proj.values().data();
    const T* k = k_proj.values().data();
    const T* v = v_proj.values().data();
    std::vector<T> scores(static_cast<size_t>(window) * window);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const T* qrow = q + (y * w + x) * c;
            const int64_t y0 = std::max<int64_t>(0, y - r), y1 = std::min<int64_t>(h - 1, y + r);
            const int64_t x0 = std::max<int64_t>(0, x - r), x1 = std::min<int64_t>(w - 1, x + r);
            size_t count = 0;
            T mx = T(0);
            for (int64_t ny = y0; ny <= y1; ++ny)
                for (int64_t nx = x0; nx <= x1; ++nx) {
                    const T* krow = k + (ny * w + nx) * c;
                    T s = T(0);
                    for (int64_t i = 0; i < c; ++i) s += qrow[i] * krow[i];
                    s *= scale;
                    scores[count] = s;
                    mx = count == 0 ? s : std::max(mx, s);
                    ++count;
                }
            T denom = T(0);
            for (size_t i = 0; i < count; ++i) {
                scores[i] = std::exp(scores[i] - mx);
                denom += scores[i];
            }
            T* orow = out.data() + (y * w + x) * c;
            size_t n = 0;
            for (int64_t ny = y0; ny <= y1; ++ny)
                for (int64_t nx = x0; nx <= x1; ++nx, ++n) {
                    const T a = scores[n] / denom;
                    const T* vrow = v + (ny * w + nx) * c;
                    for (int64_t i = 0; i < c; ++i) orow[i] += a * vrow[i];
                }
        }

    auto qn = q_proj.node();
    auto kn = k_proj.node();
    auto vn = v_proj.node();
    return make_op<T>(
        "neighborhood_attention", q_proj.shape(), std::move(out), {q_proj, k_proj, v_proj},
        [qn, kn, vn, h, w, c, r, scale, window](Node<T>& self) {
            const T* q = qn->value.data();
            const T* k = kn->value.data();
            const T* v = vn->value.data();
            const T* g = self.grad.data();
            T* gq = nullptr;
            T* gk = nullptr;
            T* gv = nullptr;
            if (qn->requires_grad) { qn->ensure_grad(); gq = qn->grad.data(); }
            if (kn->requires_grad) { kn->ensure_grad(); gk = kn->grad.data(); }
            if (vn->requires_grad) { vn->ensure_grad(); gv = vn->grad.data(); }
            std::vector<T> attn(static_cast<size_t>(window) * window);
            std::vector<T> dattn(attn.size());
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    const T* qrow = q + (y * w + x) * c;
                    const T* grow = g + (y * w + x) * c;
                    const int64_t y0 = std::max<int64_t>(0, y - r),
                                  y1 = std::min<int64_t>(h - 1, y + r);
                    const int64_t x0 = std::max<int64_t>(0, x - r),
                                  x1 = std::min<int64_t>(w - 1, x + r);
                    // recompute the softmax for this pixel
                    size_t count = 0;
                    T mx = T(0);
                    for (int64_t ny = y0; ny <= y1; ++ny)
                        for (int64_t nx = x0; nx <= x1; ++nx) {
                            const T* krow = k + (ny * w + nx) * c;
                            T s = T(0);
                            for (int64_t i = 0; i < c; ++i) s += qrow[i] * krow[i];
                            s *= scale;
                            attn[count] = s;
                            mx = count == 0 ? s : std::max(mx, s);
                            ++count;
                        }
                    T denom = T(0);
                    for (size_t i = 0; i < count; ++i) {
                        attn[i] = std::exp(attn[i] - mx);
                        denom += attn[i];
                    }
                    for (size_t i = 0; i < count; ++i) attn[i] /= denom;
                    // d(attn) then d(scores) via the softmax jacobian
                    size_t n = 0;
                    T dot_ad = T(0);
                    for (int64_t ny = y0; ny <= y1; ++ny)
                        for (int64_t nx = x0; nx <= x1; ++nx, ++n) {
                            const T* vrow = v + (ny * w + nx) * c;
                            T da = T(0);
                            for (int64_t i = 0; i < c; ++i) da += grow[i] * vrow[i];
                            dattn[n] = da;
                            dot_ad += attn[n] * da;
                            if (gv) {
                                T* gvrow = gv + (ny * w + nx) * c;
                                for (int64_t i = 0; i < c; ++i) gvrow[i] += attn[n] * grow[i];
                            }
                        }
                    n = 0;
                    for (int64_t ny = y0; ny <= y1; ++ny)
                        for (int64_t nx = x0; nx <= x1; ++nx, ++n) {
                            const T ds = attn[n] * (dattn[n] - dot_ad) * scale;
                            const T* krow = k + (ny * w + nx) * c;
                            if (gq) {
                                T* gqrow = gq + (y * w + x) * c;
                                for (int64_t i = 0; i < c; ++i) gqrow[i] += ds * krow[i];
                            }
                            if (gk) {
                                T* gkrow = gk + (ny * w + nx) * c;
                                for (int64_t i = 0; i < c; ++i) gkrow[i] += ds * qrow[i];
                            }
                        }
                }
        });
}

/// Query/key/value projections for one attention direction.
template <typename T>
struct NeighborhoodAttentionParams {
    Tensor<T> wq, wk, wv; // (C_d, C_d)
};

/// psi(q, kv, kv): scores (Wq q[p]) . (Wk kv[n]) / sqrt(C_d), values Wv kv[n].
template <typename T>
Tensor<T> neighborhood_cross_attention(const Tensor<T>& q_map, const Tensor<T>& kv_map,
                                       int window, const NeighborhoodAttentionParams<T>& p) {
    if (q_map.shape() != kv_map.shape())
        throw ShapeMismatch("neighborhood_cross_attention: shapes differ");
    const int64_t h = q_map.dim(0), w = q_map.dim(1), c = q_map.dim(2);
    auto proj = [&](const Tensor<T>& m, const Tensor<T>& wgt) {
        return reshape(matmul(reshape(m, {h * w, c}), wgt), {h, w, c});
    };
    return neighborhood_attention_core(proj(q_map, p.wq), proj(kv_map, p.wk),
                                       proj(kv_map, p.wv), window);
}

/// Two 3x3 convs with relu in between; shape-preserving.
template <typename T>
struct ConvStack2d {
    Tensor<T> w1, b1, w2, b2;
};

template <typename T>
Tensor<T> apply_conv_stack(const Tensor<T>& x, const ConvStack2d<T>& s) {
    auto h = relu(add(conv2d(x, s.w1, 1, 1), s.b1));
    return add(conv2d(h, s.w2, 1, 1), s.b2);
}

template <typename T>
struct DepthRefineParams {
    ConvStack2d<T> mono;   // image features -> C_d
    ConvStack2d<T> stereo; // bin-encoded depth -> C_d
    NeighborhoodAttentionParams<T> attn_mono;   // psi(D_M, D_S, D_S)
    NeighborhoodAttentionParams<T> attn_stereo; // psi(D_S, D_M, D_M)
    ConvStack2d<T> fuse;   // concat(2 C_d) -> depth_bins
    int window = 5;
    int depth_bins = 16;
    double d_min = 1.0, d_max = 9.0;
};

/// Fixed featurization of a depth map into bin space: triangular hat weights
/// on the two bins enclosing each pixel's continuous bin coordinate. Missing
/// or out-of-range depths encode to all zeros.
template <typename T>
Tensor<T> bin_encode_depth(const Tensor<T>& depth_map, int depth_bins, double d_min,
                           double d_max) {
    if (depth_map.rank() != 2) throw ShapeMismatch("bin_encode_depth: expects (H,W)");
    const int64_t h = depth_map.dim(0), w = depth_map.dim(1);
    std::vector<T> enc(h * w * depth_bins, T(0));
    const T* src = depth_map.values().data();
    for (int64_t p = 0; p < h * w; ++p) {
        const double z = static_cast<double>(src[p]);
        if (z <= 0) continue;
        const double b = (z - d_min) / (d_max - d_min) * (depth_bins - 1);
        if (b < 0 || b > depth_bins - 1) continue;
        const int64_t lo = static_cast<int64_t>(std::floor(b));
        const double frac = b - lo;
        enc[p * depth_bins + lo] += static_cast<T>(1.0 - frac);
        if (lo + 1 < depth_bins) enc[p * depth_bins + lo + 1] += static_cast<T>(frac);
    }
    return Tensor<T>(Shape{h, w, depth_bins}, std::move(enc));
}

/// Stereo depth map (H,W) encoded to C_d features: bin-space expansion, then
/// the conv stack.
template <typename T>
Tensor<T> encode_stereo_depth(const Tensor<T>& depth_map, const DepthRefineParams<T>& p) {
    return apply_conv_stack(bin_encode_depth(depth_map, p.depth_bins, p.d_min, p.d_max),
                            p.stereo);
}

/// Concatenate both refined feature maps on channels, map to depth bins,
/// softmax over the depth axis.
template <typename T>
Tensor<T> fuse_depth(const Tensor<T>& mono_hat, const Tensor<T>& stereo_hat,
                     const ConvStack2d<T>& fuse) {
    if (mono_hat.shape() != stereo_hat.shape()) throw ShapeMismatch("fuse_depth: shapes differ");
    auto cat = concat<T>({mono_hat, stereo_hat}, 2);
    return softmax(apply_conv_stack(cat, fuse), 2);
}

/// Full depth net: encode both modalities, exchange information through the
/// bidirectional windowed attention (both directions read the pre-update
/// features), then fuse into a per-pixel depth probability.
template <typename T>
Tensor<T> refine_depth(const Tensor<T>& image_features, const Tensor<T>& stereo_depth_map,
                       const DepthRefineParams<T>& p) {
    auto d_m = apply_conv_stack(image_features, p.mono);
    auto d_s = encode_stereo_depth(stereo_depth_map, p);
    auto m_hat = neighborhood_cross_attention(d_m, d_s, p.window, p.attn_mono);
    auto s_hat = neighborhood_cross_attention(d_s, d_m, p.window, p.attn_stereo);
    return fuse_depth(m_hat, s_hat, p.fuse);
}

} // namespace ssc
