#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ssc/gradcheck.hpp"
#include "ssc/pipeline.hpp"

namespace ssc {

namespace detail {

inline Tensor<double> rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>(std::move(shape), std::move(v));
}

inline Tensor<double> probe_dir(Shape shape, Rng& rng) { return rand_tensor(shape, rng); }

inline Tensor<double> probed(const Tensor<double>& y, const Tensor<double>& dir) {
    return sum_all(mul(y, dir));
}

/// Small config for the end-to-end differentiability check.
inline PipelineConfig composite_config() {
    PipelineConfig cfg;
    cfg.precision = "f64";
    cfg.seed = 424243;
    cfg.grid_x = 4;
    cfg.grid_y = 4;
    cfg.grid_z = 2;
    cfg.voxel_size = 1.6;
    cfg.image_height = 4;
    cfg.image_width = 4;
    cfg.fx = 3.0;
    cfg.fy = 3.0;
    cfg.cx = 1.5;
    cfg.cy = 1.5;
    cfg.cam_x = 3.2;
    cfg.cam_y = -2.0;
    cfg.cam_z = 0.8;
    cfg.depth_bins = 4;
    cfg.depth_min = 1.0;
    cfg.depth_max = 9.0;
    cfg.channels = 8;
    cfg.depth_channels = 4;
    cfg.image_channels = 4;
    cfg.attn_points = 2;
    cfg.cross_layers = 1;
    cfg.self_layers = 1;
    cfg.refine_window = 3;
    cfg.tpv_groups = 2;
    cfg.num_classes = 3;
    cfg.synth_boxes = 1;
    return cfg;
}

} // namespace detail

/// Finite-difference verification of every differentiable operation on
/// seeded small shapes, plus the composite loss on a 4x4 image / 4x4x2 grid.
/// 64-bit throughout. Each op appears exactly once.
inline std::vector<GradCheckResult> run_gradient_suite() {
    using detail::probed;
    using detail::rand_tensor;
    std::vector<GradCheckResult> results;
    Rng rng(20240605);

    auto run = [&](const std::string& name, const std::function<Tensor<double>()>& fwd,
                   std::vector<Tensor<double>> leaves, double eps = 1e-5, double tol = 1e-4) {
        results.push_back(check_gradients<double>(name, fwd, std::move(leaves), eps, tol));
    };

    { // elementwise add / mul / div probed together through one composite
        auto a = rand_tensor({3, 4}, rng);
        auto b = rand_tensor({4}, rng, 0.5, 1.5);
        auto dir = detail::probe_dir({3, 4}, rng);
        run("elementwise_add", [&] { return probed(add(a, b), dir); }, {a, b});
        run("elementwise_mul", [&] { return probed(mul(a, b), dir); }, {a, b});
        run("elementwise_div", [&] { return probed(div(a, b), dir); }, {a, b});
    }
    {
        auto a = rand_tensor({3, 5}, rng);
        auto b = rand_tensor({5, 2}, rng);
        auto dir = detail::probe_dir({3, 2}, rng);
        run("matmul", [&] { return probed(matmul(a, b), dir); }, {a, b});
    }
    {
        auto in = rand_tensor({5, 4, 2}, rng);
        auto k = rand_tensor({3, 3, 2, 3}, rng);
        auto dir = detail::probe_dir({5, 4, 3}, rng);
        run("conv2d", [&] { return probed(conv2d(in, k, 1, 1), dir); }, {in, k});
    }
    {
        auto in = rand_tensor({3, 3, 2, 2}, rng);
        auto k = rand_tensor({3, 3, 3, 2, 2}, rng);
        auto dir = detail::probe_dir({3, 3, 2, 2}, rng);
        run("conv3d", [&] { return probed(conv3d(in, k, 1, 1), dir); }, {in, k});
    }
    {
        auto x = rand_tensor({4, 5}, rng, -2, 2);
        auto dir = detail::probe_dir({4, 5}, rng);
        run("softmax", [&] { return probed(softmax(x, 1), dir); }, {x});
        run("log_softmax", [&] { return probed(log_softmax(x, 1), dir); }, {x});
    }
    {
        auto x = rand_tensor({3, 6}, rng);
        auto gain = rand_tensor({6}, rng, 0.5, 1.5);
        auto bias = rand_tensor({6}, rng);
        auto dir = detail::probe_dir({3, 6}, rng);
        run("layer_norm", [&] { return probed(layer_norm(x, gain, bias), dir); },
            {x, gain, bias});
    }
    {
        auto vol = rand_tensor({3, 3, 3, 2}, rng);
        Tensor<double> coords(Shape{5, 3}, {0.3, 1.2, 0.7, 1.9, 0.4, 1.1, -0.4, 2.3, 0.2, 2.6,
                                            2.6, 2.6, 0.8, 0.8, 0.8});
        auto dir = detail::probe_dir({5, 2}, rng);
        run("trilinear_sample", [&] { return probed(sample_trilinear(vol, coords), dir); },
            {vol, coords});
    }
    {
        auto ctx = rand_tensor({3, 4, 2}, rng);
        auto prob = rand_tensor({3, 4, 3}, rng, 0.1, 1.0);
        auto dir = detail::probe_dir({3, 4, 3, 2}, rng);
        run("lift_outer_product", [&] { return probed(lift_outer_product(ctx, prob), dir); },
            {ctx, prob});
    }
    {
        PipelineConfig cfg = detail::composite_config();
        const CameraModel cam = cfg.make_camera();
        const VoxelGridSpec grid = cfg.make_grid();
        auto frustum = rand_tensor({4, 4, 4, 2}, rng);
        auto dir = detail::probe_dir({4, 4, 2, 2}, rng);
        run("voxel_pool", [&] { return probed(voxel_pool(frustum, cam, grid), dir); },
            {frustum});
    }
    {
        auto updated = rand_tensor({3, 2}, rng);
        auto vq = rand_tensor({2, 2, 2, 2}, rng);
        OccupancyMask mask;
        mask.dims = {2, 2, 2};
        mask.bits = {1, 0, 0, 1, 0, 0, 1, 0};
        std::vector<int64_t> rows{0, 3, 6};
        auto dir = detail::probe_dir({2, 2, 2, 2}, rng);
        run("merge_queries", [&] { return probed(merge_queries(updated, vq, mask, rows), dir); },
            {updated, vq});
    }
    {
        // cross-attention: queries, frustum and every layer parameter
        Rng prng = rng.fork(7);
        auto layer = detail::init_attention_layer<double>(4, 2, prng);
        // move offsets away from their zero init so sampling is off-lattice
        for (auto* t : {&layer.offset_w, &layer.offset_b})
            for (auto& v : t->mutable_values()) v = prng.uniform(-0.3, 0.3);
        auto queries = rand_tensor({3, 4}, rng);
        auto frustum = rand_tensor({4, 4, 3, 4}, rng);
        Tensor<double> refs(Shape{3, 3}, {1.2, 0.7, 1.1, 2.4, 1.6, 0.3, 0.4, 2.2, 1.9});
        auto dir = detail::probe_dir({3, 4}, rng);
        run("deformable_cross_attention",
            [&] {
                return probed(deformable_cross_attention_layer(queries, frustum, refs, layer),
                              dir);
            },
            {queries, frustum, layer.offset_w, layer.offset_b, layer.weight_w, layer.value_w,
             layer.out_w, layer.ln_gain, layer.ln_bias});
    }
    {
        Rng prng = rng.fork(8);
        auto layer = detail::init_attention_layer<double>(4, 2, prng);
        for (auto* t : {&layer.offset_w, &layer.offset_b})
            for (auto& v : t->mutable_values()) v = prng.uniform(-0.3, 0.3);
        auto volume = rand_tensor({4, 4, 2, 4}, rng);
        auto dir = detail::probe_dir({4, 4, 2, 4}, rng);
        run("deformable_self_attention",
            [&] { return probed(deformable_self_attention_layer(volume, layer), dir); },
            {volume, layer.offset_w, layer.offset_b, layer.weight_w, layer.value_w, layer.out_w,
             layer.ln_gain, layer.ln_bias});
    }
    {
        auto q = rand_tensor({4, 4, 3}, rng);
        auto kv = rand_tensor({4, 4, 3}, rng);
        NeighborhoodAttentionParams<double> p;
        p.wq = rand_tensor({3, 3}, rng);
        p.wk = rand_tensor({3, 3}, rng);
        p.wv = rand_tensor({3, 3}, rng);
        auto dir = detail::probe_dir({4, 4, 3}, rng);
        run("neighborhood_attention",
            [&] { return probed(neighborhood_cross_attention(q, kv, 3, p), dir); },
            {q, kv, p.wq, p.wk, p.wv});
    }
    {
        Rng prng = rng.fork(9);
        auto fuse = detail::init_conv_stack2d<double>(4, 3, 3, prng);
        auto m_hat = rand_tensor({4, 4, 2}, rng);
        auto s_hat = rand_tensor({4, 4, 2}, rng);
        auto dir = detail::probe_dir({4, 4, 3}, rng);
        run("fuse_depth", [&] { return probed(fuse_depth(m_hat, s_hat, fuse), dir); },
            {m_hat, s_hat, fuse.w1, fuse.b1, fuse.w2, fuse.b2});
    }
    {
        auto vol = rand_tensor({4, 4, 2, 2}, rng);
        S2cParams<double> p;
        p.proj_w = rand_tensor({4, 2}, rng);
        p.proj_b = rand_tensor({2}, rng);
        auto dir = detail::probe_dir({4, 4, 2}, rng);
        run("group_s2c_pool", [&] { return probed(group_s2c_pool(vol, 2, 2, p), dir); },
            {vol, p.proj_w, p.proj_b});
    }
    {
        auto fvox = rand_tensor({2, 2, 2, 3}, rng);
        TpvPlanes<double> planes;
        planes.xy = rand_tensor({2, 2, 3}, rng);
        planes.xz = rand_tensor({2, 2, 3}, rng);
        planes.yz = rand_tensor({2, 2, 3}, rng);
        FuseParams<double> p;
        p.w = rand_tensor({1, 1, 1, 3, 4}, rng);
        p.b = rand_tensor({4}, rng);
        auto dir = detail::probe_dir({2, 2, 2, 3}, rng);
        run("dynamic_fuse",
            [&] { return probed(dynamic_fuse(fvox, planes, p), dir); },
            {fvox, planes.xy, planes.xz, planes.yz, p.w, p.b});
    }
    {
        // the four losses share a small labelled grid
        SemanticVoxelGrid grid;
        grid.spec.dims = {2, 2, 2};
        grid.spec.voxel_size = 1.0;
        grid.num_classes = 3;
        grid.labels = {0, 1, 2, 0, 1, SemanticVoxelGrid::kIgnore, 2, 0};
        auto logits = rand_tensor({2, 2, 2, 3}, rng);
        ClassWeighting w{{0.7, 1.3, 2.1}};
        run("loss_weighted_ce",
            [&] { return weighted_cross_entropy(logits, grid, w); }, {logits});
        run("loss_scal_geo", [&] { return scal_loss(logits, grid, ScalMode::Geometric); },
            {logits});
        run("loss_scal_sem", [&] { return scal_loss(logits, grid, ScalMode::Semantic); },
            {logits});

        CameraModel cam;
        cam.intrinsics = make_intrinsics(2.0, 2.0, 1.5, 1.5);
        cam.height = 2;
        cam.width = 2;
        cam.depth_bins = 4;
        cam.d_min = 1.0;
        cam.d_max = 5.0;
        DepthMap gt;
        gt.height = 2;
        gt.width = 2;
        gt.values = {1.5f, 3.2f, 0.0f, 4.9f};
        auto raw = rand_tensor({2, 2, 4}, rng, -1.5, 1.5);
        run("loss_depth", [&] { return depth_loss(softmax(raw, 2), gt, cam); }, {raw});
    }
    {
        // composite: full pipeline loss wrt every parameter on the small
        // config, with the zero-initialized blocks nudged off their kinks
        PipelineConfig cfg = detail::composite_config();
        SceneSample sample = generate_scene(cfg.seed, cfg);
        auto model = Model<double>::init(cfg);
        auto params = model.parameters();
        Rng nudge = rng.fork(11);
        for (auto& p : params)
            for (auto& v : p.tensor.mutable_values()) v += nudge.uniform(-0.05, 0.05);
        const ClassWeighting weights = compute_class_weights(sample.grid);
        std::vector<Tensor<double>> leaves;
        for (auto& p : params) leaves.push_back(p.tensor);
        run("composite_total_loss",
            [&] {
                auto r = forward(model, sample);
                return compute_losses(r, sample, weights, cfg).total;
            },
            leaves, 1e-6, 1e-3);
    }
    return results;
}

} // namespace ssc
