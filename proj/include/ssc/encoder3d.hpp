#pragma once

#include "ssc/conv.hpp"
#include "ssc/depth_refine.hpp" // ConvStack2d
#include "ssc/sample.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

template <typename T>
struct ConvStack3d {
    Tensor<T> w1, b1, w2, b2;
};

template <typename T>
Tensor<T> apply_conv_stack3d(const Tensor<T>& x, const ConvStack3d<T>& s) {
    auto h = relu(add(conv3d(x, s.w1, 1, 1), s.b1));
    return add(conv3d(h, s.w2, 1, 1), s.b2);
}

template <typename T>
struct VoxelBranchParams {
    ConvStack3d<T> block1, block2;
};

/// Two shape-preserving residual 3D-conv blocks; with zero weights this is
/// the identity.
template <typename T>
Tensor<T> voxel_branch(const Tensor<T>& volume, const VoxelBranchParams<T>& p) {
    if (volume.rank() != 4) throw ShapeMismatch("voxel_branch: volume must be (X,Y,Z,C)");
    auto h = add(volume, apply_conv_stack3d(volume, p.block1));
    return add(h, apply_conv_stack3d(h, p.block2));
}

/// Pooling stage of the group spatial-to-channel operation: partition `axis`
/// into `groups` equal slabs, max over each slab, concatenate the group
/// results on channels. Gradient of each max routes to its lowest-index
/// maximizer. Output is (d1,d2,groups*C) with the two remaining spatial axes
/// in their original order.
template <typename T>
Tensor<T> slab_max_pool(const Tensor<T>& volume, int axis, int groups) {
    if (volume.rank() != 4) throw ShapeMismatch("slab_max_pool: volume must be (X,Y,Z,C)");
    if (axis < 0 || axis > 2) throw ShapeMismatch("slab_max_pool: axis must be 0..2");
    const int64_t extent = volume.dim(axis);
    if (groups < 1 || extent % groups != 0)
        throw IndivisibleGroups("slab_max_pool: axis extent " + std::to_string(extent) +
                                " not divisible by " + std::to_string(groups));
    const int64_t slab = extent / groups;
    const int64_t c = volume.dim(3);
    std::array<int64_t, 2> keep{};
    int ki = 0;
    for (int a = 0; a < 3; ++a)
        if (a != axis) keep[ki++] = a;
    const int64_t d1 = volume.dim(static_cast<int>(keep[0]));
    const int64_t d2 = volume.dim(static_cast<int>(keep[1]));
    const Shape vs = volume.shape();
    const Shape strides = row_major_strides(vs);
    const int64_t s1 = strides[keep[0]], s2 = strides[keep[1]], sa = strides[axis];

    std::vector<T> out(d1 * d2 * groups * c);
    const T* src = volume.values().data();
    for (int64_t i = 0; i < d1; ++i)
        for (int64_t j = 0; j < d2; ++j)
            for (int64_t g = 0; g < groups; ++g)
                for (int64_t ch = 0; ch < c; ++ch) {
                    const int64_t base = i * s1 + j * s2 + g * slab * sa + ch;
                    T best = src[base];
                    for (int64_t k = 1; k < slab; ++k) {
                        const T v = src[base + k * sa];
                        if (v > best) best = v;
                    }
                    out[((i * d2 + j) * groups + g) * c + ch] = best;
                }
    auto vn = volume.node();
    return make_op<T>(
        "slab_max_pool", Shape{d1, d2, groups * c}, std::move(out), {volume},
        [vn, d1, d2, groups, slab, c, s1, s2, sa](Node<T>& self) {
            if (!vn->requires_grad) return;
            vn->ensure_grad();
            const T* src = vn->value.data();
            T* gv = vn->grad.data();
            const T* g = self.grad.data();
            for (int64_t i = 0; i < d1; ++i)
                for (int64_t j = 0; j < d2; ++j)
                    for (int64_t gi = 0; gi < groups; ++gi)
                        for (int64_t ch = 0; ch < c; ++ch) {
                            const int64_t base = i * s1 + j * s2 + gi * slab * sa + ch;
                            int64_t arg = 0;
                            T best = src[base];
                            for (int64_t k = 1; k < slab; ++k) {
                                const T v = src[base + k * sa];
                                if (v > best) {
                                    best = v;
                                    arg = k;
                                }
                            }
                            gv[base + arg * sa] += g[((i * d2 + j) * groups + gi) * c + ch];
                        }
        });
}

template <typename T>
struct S2cParams {
    Tensor<T> proj_w, proj_b; // (groups*C, C), (C)
};

/// Group spatial-to-channel pooling: slab max, then a 1x1 convolution back to
/// C channels.
template <typename T>
Tensor<T> group_s2c_pool(const Tensor<T>& volume, int axis, int groups, const S2cParams<T>& p) {
    auto pooled = slab_max_pool(volume, axis, groups); // (d1,d2,K*C)
    const int64_t d1 = pooled.dim(0), d2 = pooled.dim(1), kc = pooled.dim(2);
    const int64_t c = p.proj_w.dim(1);
    auto flat = matmul(reshape(pooled, {d1 * d2, kc}), p.proj_w);
    return reshape(add(flat, p.proj_b), {d1, d2, c});
}

template <typename T>
struct TpvPlanes {
    Tensor<T> xy, xz, yz; // (X,Y,C), (X,Z,C), (Y,Z,C)
};

template <typename T>
struct PlaneParams {
    S2cParams<T> s2c;
    ConvStack2d<T> refine;
};

template <typename T>
struct TpvParams {
    PlaneParams<T> xy, xz, yz;
    int groups = 2;
};

/// Three plane features via group spatial-to-channel pooling along Z, Y and
/// X respectively, each refined by a residual 2-D conv stack.
template <typename T>
TpvPlanes<T> tpv_branch(const Tensor<T>& volume, const TpvParams<T>& p) {
    auto make_plane = [&](int axis, const PlaneParams<T>& pp) {
        auto plane = group_s2c_pool(volume, axis, p.groups, pp.s2c);
        return add(plane, apply_conv_stack(plane, pp.refine));
    };
    TpvPlanes<T> out;
    out.xy = make_plane(2, p.xy);
    out.xz = make_plane(1, p.xz);
    out.yz = make_plane(0, p.yz);
    return out;
}

template <typename T>
struct FuseParams {
    Tensor<T> w, b; // (1,1,1,C,4), (4)
};

/// Aggregation weights from the voxel branch (softmax over the 4 candidates),
/// then a per-voxel convex combination of the voxel features and the three
/// broadcast TPV planes.
template <typename T>
Tensor<T> dynamic_fuse(const Tensor<T>& f_voxel, const TpvPlanes<T>& planes,
                       const FuseParams<T>& p) {
    if (f_voxel.rank() != 4) throw ShapeMismatch("dynamic_fuse: voxel features must be (X,Y,Z,C)");
    const int64_t x = f_voxel.dim(0), y = f_voxel.dim(1), z = f_voxel.dim(2), c = f_voxel.dim(3);
    if (planes.xy.shape() != Shape{x, y, c} || planes.xz.shape() != Shape{x, z, c} ||
        planes.yz.shape() != Shape{y, z, c})
        throw ShapeMismatch("dynamic_fuse: plane shapes do not match volume");
    auto weights = softmax(add(conv3d(f_voxel, p.w, 1, 0), p.b), 3); // (X,Y,Z,4)
    auto w0 = slice(weights, 3, 0, 1);
    auto w1 = slice(weights, 3, 1, 1);
    auto w2 = slice(weights, 3, 2, 1);
    auto w3 = slice(weights, 3, 3, 1);
    auto fxy = reshape(planes.xy, {x, y, 1, c});
    auto fxz = reshape(planes.xz, {x, 1, z, c});
    auto fyz = reshape(planes.yz, {1, y, z, c});
    return add(add(add(mul(w0, f_voxel), mul(w1, fxy)), mul(w2, fxz)), mul(w3, fyz));
}

template <typename T>
struct DecodeParams {
    Tensor<T> w, b; // (1,1,1,C,num_classes), (num_classes)
    bool upsample = false;
};

/// Doubles each spatial extent by trilinear resampling at half-integer
/// coordinates (clamped at the far edge), so original lattice points keep
/// their exact values.
template <typename T>
Tensor<T> upsample_x2(const Tensor<T>& volume) {
    if (volume.rank() != 4) throw ShapeMismatch("upsample_x2: volume must be (X,Y,Z,C)");
    const int64_t x = volume.dim(0), y = volume.dim(1), z = volume.dim(2), c = volume.dim(3);
    const int64_t xo = 2 * x, yo = 2 * y, zo = 2 * z;
    std::vector<T> coords(xo * yo * zo * 3);
    int64_t i = 0;
    auto half = [](int64_t v, int64_t hi) {
        const double t = 0.5 * static_cast<double>(v);
        return t > static_cast<double>(hi - 1) ? static_cast<double>(hi - 1) : t;
    };
    for (int64_t xi = 0; xi < xo; ++xi)
        for (int64_t yi = 0; yi < yo; ++yi)
            for (int64_t zi = 0; zi < zo; ++zi, ++i) {
                coords[i * 3 + 0] = static_cast<T>(half(xi, x));
                coords[i * 3 + 1] = static_cast<T>(half(yi, y));
                coords[i * 3 + 2] = static_cast<T>(half(zi, z));
            }
    auto sampled = sample_trilinear(volume, Tensor<T>(Shape{xo * yo * zo, 3}, std::move(coords)));
    return reshape(sampled, {xo, yo, zo, c});
}

/// Per-voxel class logits via a 1x1x1 convolution, optionally upsampled x2.
template <typename T>
Tensor<T> decode_head(const Tensor<T>& f_final, const DecodeParams<T>& p) {
    auto logits = add(conv3d(f_final, p.w, 1, 0), p.b);
    return p.upsample ? upsample_x2(logits) : logits;
}

} // namespace ssc
