#pragma once

#include <array>
#include <vector>

#include "ssc/geometry.hpp"
#include "ssc/sample.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

/// Frustum features F = C (x) D: F[v,u,d,c] = context[v,u,c] * prob[v,u,d].
/// Result is (H,W,D,C).
template <typename T>
Tensor<T> lift_outer_product(const Tensor<T>& context, const Tensor<T>& prob) {
    if (context.rank() != 3 || prob.rank() != 3 || context.dim(0) != prob.dim(0) ||
        context.dim(1) != prob.dim(1))
        throw ShapeMismatch("lift_outer_product: context (H,W,C) and prob (H,W,D) must agree");
    const int64_t h = context.dim(0), w = context.dim(1), c = context.dim(2), d = prob.dim(2);
    return mul(reshape(prob, {h, w, d, 1}), reshape(context, {h, w, 1, c}));
}

/// Flat voxel id (or -1) for every frustum cell (v,u,d), indexed in frustum
/// storage order.
inline std::vector<int64_t> build_frustum_voxel_map(const CameraModel& cam,
                                                    const VoxelGridSpec& grid) {
    const CameraProjector proj(cam);
    std::vector<int64_t> map(int64_t(cam.height) * cam.width * cam.depth_bins, -1);
    for (int v = 0; v < cam.height; ++v)
        for (int u = 0; u < cam.width; ++u)
            for (int d = 0; d < cam.depth_bins; ++d) {
                const Vec3 p = proj.back_project(u, v, cam.bin_to_depth(d));
                std::array<int64_t, 3> idx;
                if (grid.world_to_index(p, idx))
                    map[(int64_t(v) * cam.width + u) * cam.depth_bins + d] = grid.flat(idx);
            }
    return map;
}

/// Scatter-sum of frustum features into voxels: each cell (u,v,d) lands in
/// the voxel containing its back-projection; cells outside the grid are
/// dropped. Accumulation order is fixed by a (u,v,d) lexicographic scan, so
/// results are bitwise reproducible.
template <typename T>
Tensor<T> voxel_pool(const Tensor<T>& frustum, const CameraModel& cam,
                     const VoxelGridSpec& grid) {
    if (frustum.rank() != 4 || frustum.dim(0) != cam.height || frustum.dim(1) != cam.width ||
        frustum.dim(2) != cam.depth_bins)
        throw ShapeMismatch("voxel_pool: frustum must be (H,W,depth_bins,C)");
    const int64_t h = frustum.dim(0), w = frustum.dim(1), d = frustum.dim(2), c = frustum.dim(3);
    const auto map = build_frustum_voxel_map(cam, grid);
    std::vector<T> out(grid.voxel_count() * c, T(0));
    const T* f = frustum.values().data();
    for (int64_t u = 0; u < w; ++u)
        for (int64_t v = 0; v < h; ++v)
            for (int64_t dd = 0; dd < d; ++dd) {
                const int64_t cell = (v * w + u) * d + dd;
                const int64_t vox = map[cell];
                if (vox < 0) continue;
                const T* src = f + cell * c;
                T* dst = out.data() + vox * c;
                for (int64_t i = 0; i < c; ++i) dst[i] += src[i];
            }
    auto fn = frustum.node();
    return make_op<T>("voxel_pool", Shape{grid.dims[0], grid.dims[1], grid.dims[2], c},
                      std::move(out), {frustum}, [fn, map, h, w, d, c](Node<T>& self) {
                          if (!fn->requires_grad) return;
                          fn->ensure_grad();
                          T* gf = fn->grad.data();
                          const T* g = self.grad.data();
                          for (int64_t u = 0; u < w; ++u)
                              for (int64_t v = 0; v < h; ++v)
                                  for (int64_t dd = 0; dd < d; ++dd) {
                                      const int64_t cell = (v * w + u) * d + dd;
                                      const int64_t vox = map[cell];
                                      if (vox < 0) continue;
                                      T* dst = gf + cell * c;
                                      const T* src = g + vox * c;
                                      for (int64_t i = 0; i < c; ++i) dst[i] += src[i];
                                  }
                      });
}

/// Visible voxel queries: indices where the mask is set (sorted
/// lexicographically), their features gathered from the query volume, and
/// their reference points 3D-projected from the voxel centers.
template <typename T>
struct QuerySet {
    std::vector<std::array<int64_t, 3>> indices;
    std::vector<int64_t> rows; // flat voxel ids, same order as indices
    Tensor<T> features;        // (Q, C)
    Tensor<T> ref_points;      // (Q, 3) continuous (u, v, bin); constant
};

template <typename T>
QuerySet<T> select_proposals(const Tensor<T>& vq, const OccupancyMask& mask,
                             const CameraModel& cam, const VoxelGridSpec& grid) {
    if (vq.rank() != 4 || vq.dim(0) != grid.dims[0] || vq.dim(1) != grid.dims[1] ||
        vq.dim(2) != grid.dims[2])
        throw ShapeMismatch("select_proposals: query volume does not match grid dims");
    if (mask.dims != grid.dims)
        throw ShapeMismatch("select_proposals: mask does not match grid dims");
    QuerySet<T> qs;
    for (int64_t x = 0; x < grid.dims[0]; ++x)
        for (int64_t y = 0; y < grid.dims[1]; ++y)
            for (int64_t z = 0; z < grid.dims[2]; ++z)
                if (mask.at(x, y, z)) {
                    qs.indices.push_back({x, y, z});
                    qs.rows.push_back(grid.flat({x, y, z}));
                }
    const int64_t q = static_cast<int64_t>(qs.rows.size());
    const int64_t c = vq.dim(3);
    qs.features = gather_rows(reshape(vq, {grid.voxel_count(), c}), qs.rows);
    std::vector<T> refs(q * 3);
    for (int64_t i = 0; i < q; ++i) {
        const Vec3 center = grid.index_to_center(qs.indices[i]);
        const Vec4 camp = cam.extrinsics * Vec4{center.x, center.y, center.z, 1.0};
        if (camp.z > 1e-9) {
            const PixelDepth pd = cam.project_to_pixel(center);
            refs[i * 3 + 0] = static_cast<T>(pd.u);
            refs[i * 3 + 1] = static_cast<T>(pd.v);
            refs[i * 3 + 2] = static_cast<T>(pd.bin);
        } else {
            // behind the camera: park far outside so zero padding mutes it
            refs[i * 3 + 0] = refs[i * 3 + 1] = refs[i * 3 + 2] = static_cast<T>(-1e6);
        }
    }
    qs.ref_points = Tensor<T>(Shape{q, 3}, std::move(refs));
    return qs;
}

/// Per-layer learnable blocks shared by the cross- and self-attention forms.
template <typename T>
struct DeformableAttentionLayer {
    Tensor<T> offset_w, offset_b; // (C, 3N), (3N); zero-initialized
    Tensor<T> weight_w, weight_b; // (C, N), (N)
    Tensor<T> value_w;            // (C, C)
    Tensor<T> out_w, out_b;       // (C, C), (C)
    Tensor<T> ln_gain, ln_bias;   // (C)
    int n_points = 8;
};

namespace detail {

/// Shared aggregation: predict offsets and weights from the query rows,
/// sample the volume at base + offset, project per point, softmax-combine,
/// project out. `base` is (Q,3) in the volume's axis order.
template <typename T>
Tensor<T> deformable_aggregate(const Tensor<T>& query_rows, const Tensor<T>& volume,
                               const Tensor<T>& base, const DeformableAttentionLayer<T>& p) {
    const int64_t q = query_rows.dim(0);
    const int64_t n = p.n_points;
    auto offsets = reshape(add(matmul(query_rows, p.offset_w), p.offset_b), {q, n, 3});
    auto attn = softmax(add(matmul(query_rows, p.weight_w), p.weight_b), 1); // (Q,N)
    auto coords = reshape(add(reshape(base, {q, 1, 3}), offsets), {q * n, 3});
    auto sampled = matmul(sample_trilinear(volume, coords), p.value_w); // (Q*N, C)
    auto weighted = mul(reshape(sampled, {q, n, sampled.dim(1)}), reshape(attn, {q, n, 1}));
    return add(matmul(reduce_sum(weighted, 1), p.out_w), p.out_b);
}

} // namespace detail

/// Pre-residual 3D deformable cross-attention. References are (u,v,bin);
/// the frustum's storage axes are (v,u,bin), so the base coordinates are
/// reordered accordingly. Offsets are in (pixel,pixel,bin) lattice units.
template <typename T>
Tensor<T> deformable_cross_attention_core(const Tensor<T>& queries, const Tensor<T>& frustum,
                                          const Tensor<T>& refs,
                                          const DeformableAttentionLayer<T>& p) {
    if (queries.rank() != 2 || refs.rank() != 2 || refs.dim(0) != queries.dim(0) ||
        refs.dim(1) != 3)
        throw ShapeMismatch("deformable_cross_attention: queries (Q,C), refs (Q,3)");
    const int64_t q = queries.dim(0);
    std::vector<T> base(q * 3);
    const T* r = refs.values().data();
    for (int64_t i = 0; i < q; ++i) {
        base[i * 3 + 0] = r[i * 3 + 1]; // v
        base[i * 3 + 1] = r[i * 3 + 0]; // u
        base[i * 3 + 2] = r[i * 3 + 2]; // bin
    }
    return detail::deformable_aggregate(queries, frustum,
                                        Tensor<T>(Shape{q, 3}, std::move(base)), p);
}

/// Full cross-attention block: residual add + layer normalization.
template <typename T>
Tensor<T> deformable_cross_attention_layer(const Tensor<T>& queries, const Tensor<T>& frustum,
                                           const Tensor<T>& refs,
                                           const DeformableAttentionLayer<T>& p) {
    auto core = deformable_cross_attention_core(queries, frustum, refs, p);
    return layer_norm(add(queries, core), p.ln_gain, p.ln_bias, p.ln_eps);
}

/// Updated proposals scattered back over the query volume; unmasked voxels
/// keep their pooled features.
template <typename T>
Tensor<T> merge_queries(const Tensor<T>& updated, const Tensor<T>& vq,
                        const OccupancyMask& mask, const std::vector<int64_t>& rows) {
    if (vq.rank() != 4) throw ShapeMismatch("merge_queries: volume must be (X,Y,Z,C)");
    const int64_t vox = vq.dim(0) * vq.dim(1) * vq.dim(2);
    const int64_t c = vq.dim(3);
    if (updated.rank() != 2 || updated.dim(1) != c ||
        updated.dim(0) != static_cast<int64_t>(rows.size()))
        throw ShapeMismatch("merge_queries: updated rows do not match row list");
    if (mask.dims != std::array<int64_t, 3>{vq.dim(0), vq.dim(1), vq.dim(2)})
        throw ShapeMismatch("merge_queries: mask dims do not match volume");
    for (int64_t r : rows)
        if (r < 0 || r >= vox) throw IndexOutOfRange("merge_queries: row outside volume");
    std::vector<T> out = vq.values();
    const T* up = updated.values().data();
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy(up + i * c, up + (i + 1) * c, out.data() + rows[i] * c);
    auto un = updated.node();
    auto vn = vq.node();
    return make_op<T>("merge_queries", vq.shape(), std::move(out), {updated, vq},
                      [un, vn, rows, vox, c](Node<T>& self) {
                          std::vector<int64_t> row_of(vox, -1);
                          for (size_t i = 0; i < rows.size(); ++i) row_of[rows[i]] = i;
                          const T* g = self.grad.data();
                          if (un->requires_grad) un->ensure_grad();
                          if (vn->requires_grad) vn->ensure_grad();
                          for (int64_t vx = 0; vx < vox; ++vx) {
                              const int64_t qi = row_of[vx];
                              if (qi >= 0) {
                                  if (!un->requires_grad) continue;
                                  T* dst = un->grad.data() + qi * c;
                                  const T* src = g + vx * c;
                                  for (int64_t i = 0; i < c; ++i) dst[i] += src[i];
                              } else if (vn->requires_grad) {
                                  T* dst = vn->grad.data() + vx * c;
                                  const T* src = g + vx * c;
                                  for (int64_t i = 0; i < c; ++i) dst[i] += src[i];
                              }
                          }
                      });
}

/// Pre-residual deformable self-attention over the voxel volume. Every voxel
/// predicts offsets in voxel-index units around its own position.
template <typename T>
Tensor<T> deformable_self_attention_core(const Tensor<T>& volume,
                                         const DeformableAttentionLayer<T>& p) {
    if (volume.rank() != 4) throw ShapeMismatch("deformable_self_attention: volume (X,Y,Z,C)");
    const int64_t x = volume.dim(0), y = volume.dim(1), z = volume.dim(2), c = volume.dim(3);
    const int64_t vox = x * y * z;
    auto flat = reshape(volume, {vox, c});
    std::vector<T> base(vox * 3);
    int64_t i = 0;
    for (int64_t xi = 0; xi < x; ++xi)
        for (int64_t yi = 0; yi < y; ++yi)
            for (int64_t zi = 0; zi < z; ++zi, ++i) {
                base[i * 3 + 0] = static_cast<T>(xi);
                base[i * 3 + 1] = static_cast<T>(yi);
                base[i * 3 + 2] = static_cast<T>(zi);
            }
    return detail::deformable_aggregate(flat, volume, Tensor<T>(Shape{vox, 3}, std::move(base)),
                                        p);
}

template <typename T>
Tensor<T> deformable_self_attention_layer(const Tensor<T>& volume,
                                          const DeformableAttentionLayer<T>& p) {
    const int64_t c = volume.dim(3);
    const int64_t vox = volume.dim(0) * volume.dim(1) * volume.dim(2);
    auto core = deformable_self_attention_core(volume, p);
    auto normed = layer_norm(add(reshape(volume, {vox, c}), core), p.ln_gain, p.ln_bias, p.ln_eps);
    return reshape(normed, volume.shape());
}

template <typename T>
struct ViewTransformerParams {
    std::vector<DeformableAttentionLayer<T>> cross;
    std::vector<DeformableAttentionLayer<T>> self_diffusion;
};

/// Full view transformation: lift -> voxel pooling -> depth-based proposal
/// selection -> cross-attention over proposals -> merge -> self-attention
/// diffusion. With an empty mask the proposal stages are skipped.
template <typename T>
Tensor<T> run_view_transformer(const Tensor<T>& context, const Tensor<T>& prob,
                               const std::vector<float>& depth_map, const CameraModel& cam,
                               const VoxelGridSpec& grid, const ViewTransformerParams<T>& p,
                               int mask_stride = 1) {
    auto frustum = lift_outer_product(context, prob);
    auto vq = voxel_pool(frustum, cam, grid);
    const OccupancyMask mask = build_occupancy_mask(depth_map, cam, grid, mask_stride);
    Tensor<T> f3d = vq;
    if (mask.count() > 0) {
        auto qs = select_proposals(vq, mask, cam, grid);
        auto q = qs.features;
        for (const auto& layer : p.cross)
            q = deformable_cross_attention_layer(q, frustum, qs.ref_points, layer);
        f3d = merge_queries(q, vq, mask, qs.rows);
    }
    for (const auto& layer : p.self_diffusion) f3d = deformable_self_attention_layer(f3d, layer);
    return f3d;
}

} // namespace ssc
