#pragma once

#include <string>
#include <vector>

#include "ssc/config.hpp"
#include "ssc/depth_refine.hpp"
#include "ssc/encoder3d.hpp"
#include "ssc/io.hpp"
#include "ssc/losses.hpp"
#include "ssc/metrics.hpp"
#include "ssc/rng.hpp"
#include "ssc/synth.hpp"
#include "ssc/view_transform.hpp"

namespace ssc {

namespace detail {

template <typename T>
Tensor<T> param_uniform(Shape shape, int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
ConvStack2d<T> init_conv_stack2d(int64_t cin, int64_t mid, int64_t cout, Rng& rng) {
    ConvStack2d<T> s;
    s.w1 = param_uniform<T>({3, 3, cin, mid}, 9 * cin, rng);
    s.b1 = Tensor<T>(Shape{mid}, T(0));
    s.w2 = param_uniform<T>({3, 3, mid, cout}, 9 * mid, rng);
    s.b2 = Tensor<T>(Shape{cout}, T(0));
    return s;
}

template <typename T>
ConvStack3d<T> init_conv_stack3d(int64_t c, Rng& rng) {
    ConvStack3d<T> s;
    s.w1 = param_uniform<T>({3, 3, 3, c, c}, 27 * c, rng);
    s.b1 = Tensor<T>(Shape{c}, T(0));
    s.w2 = param_uniform<T>({3, 3, 3, c, c}, 27 * c, rng);
    s.b2 = Tensor<T>(Shape{c}, T(0));
    return s;
}

/// Writes scale * identity into the center tap of a conv kernel
/// (kh,kw,cin,cout), zeroing everything else; diagonal over min(cin,cout).
template <typename T>
void set_center_identity(Tensor<T>& kernel, double scale) {
    const Shape& s = kernel.shape();
    auto& v = kernel.mutable_values();
    std::fill(v.begin(), v.end(), T(0));
    const int64_t cin = s[s.size() - 2], cout = s[s.size() - 1];
    int64_t center = 0;
    for (size_t i = 0; i + 2 < s.size(); ++i) center = center * s[i] + s[i] / 2;
    for (int64_t i = 0; i < std::min(cin, cout); ++i)
        v[(center * cin + i) * cout + i] = static_cast<T>(scale);
}

template <typename T>
void set_identity(Tensor<T>& mat) {
    auto& v = mat.mutable_values();
    std::fill(v.begin(), v.end(), T(0));
    const int64_t n = std::min(mat.dim(0), mat.dim(1));
    for (int64_t i = 0; i < n; ++i) v[i * mat.dim(1) + i] = T(1);
}

/// Offset predictors start at zero so the first pass samples exactly at the
/// reference points.
template <typename T>
DeformableAttentionLayer<T> init_attention_layer(int64_t c, int n_points, Rng& rng) {
    DeformableAttentionLayer<T> l;
    l.n_points = n_points;
    l.offset_w = Tensor<T>(Shape{c, 3 * n_points}, T(0));
    l.offset_b = Tensor<T>(Shape{3 * n_points}, T(0));
    l.weight_w = param_uniform<T>({c, n_points}, c, rng);
    l.weight_b = Tensor<T>(Shape{n_points}, T(0));
    l.value_w = param_uniform<T>({c, c}, c, rng);
    l.out_w = param_uniform<T>({c, c}, c, rng);
    l.out_b = Tensor<T>(Shape{c}, T(0));
    l.ln_gain = Tensor<T>(Shape{c}, T(1));
    l.ln_bias = Tensor<T>(Shape{c}, T(0));
    return l;
}

} // namespace detail

/// All learnable state of the pipeline. Parameter registration order is
/// fixed; checkpoints depend on it.
template <typename T>
struct Model {
    PipelineConfig cfg;

    ConvStack2d<T> context_net; // image features -> C
    DepthRefineParams<T> depth_net;
    ViewTransformerParams<T> view;
    VoxelBranchParams<T> voxel;
    TpvParams<T> tpv;
    FuseParams<T> fuse;
    DecodeParams<T> decode;

    static Model init(const PipelineConfig& cfg) {
        Model m;
        m.cfg = cfg;
        Rng rng = Rng(cfg.seed).fork(100);
        const int64_t C = cfg.channels, Cd = cfg.depth_channels, Ci = cfg.image_channels;
        m.context_net = detail::init_conv_stack2d<T>(Ci, C, C, rng);
        m.depth_net.mono = detail::init_conv_stack2d<T>(Ci, Cd, Cd, rng);
        m.depth_net.stereo = detail::init_conv_stack2d<T>(cfg.depth_bins, Cd, Cd, rng);
        m.depth_net.depth_bins = cfg.depth_bins;
        m.depth_net.d_min = cfg.depth_min;
        m.depth_net.d_max = cfg.depth_max;
        for (auto* a : {&m.depth_net.attn_mono, &m.depth_net.attn_stereo}) {
            a->wq = detail::param_uniform<T>({Cd, Cd}, Cd, rng);
            a->wk = detail::param_uniform<T>({Cd, Cd}, Cd, rng);
            a->wv = detail::param_uniform<T>({Cd, Cd}, Cd, rng);
        }
        m.depth_net.fuse = detail::init_conv_stack2d<T>(2 * Cd, Cd, cfg.depth_bins, rng);
        m.depth_net.window = cfg.refine_window;
        // The depth path starts as a passthrough of the bin-encoded stereo
        // depth at a confident logit scale, standing in for the pretrained
        // stereo estimator; training refines it from there.
        detail::set_center_identity(m.depth_net.stereo.w1, 1.0);
        detail::set_center_identity(m.depth_net.stereo.w2, 1.0);
        detail::set_identity(m.depth_net.attn_mono.wv);
        detail::set_identity(m.depth_net.attn_stereo.wv);
        detail::set_center_identity(m.depth_net.fuse.w1, 1.0);
        detail::set_center_identity(m.depth_net.fuse.w2, 8.0);
        for (int i = 0; i < cfg.cross_layers; ++i)
            m.view.cross.push_back(detail::init_attention_layer<T>(C, cfg.attn_points, rng));
        for (int i = 0; i < cfg.self_layers; ++i)
            m.view.self_diffusion.push_back(detail::init_attention_layer<T>(C, cfg.attn_points, rng));
        m.voxel.block1 = detail::init_conv_stack3d<T>(C, rng);
        m.voxel.block2 = detail::init_conv_stack3d<T>(C, rng);
        m.tpv.groups = cfg.tpv_groups;
        for (auto* p : {&m.tpv.xy, &m.tpv.xz, &m.tpv.yz}) {
            p->s2c.proj_w = detail::param_uniform<T>({cfg.tpv_groups * C, C}, cfg.tpv_groups * C, rng);
            p->s2c.proj_b = Tensor<T>(Shape{C}, T(0));
            p->refine = detail::init_conv_stack2d<T>(C, C, C, rng);
        }
        // zero-initialized weight generator: fusion starts as an even blend,
        // so no branch can saturate the softmax before it carries signal
        m.fuse.w = Tensor<T>(Shape{1, 1, 1, C, 4}, T(0));
        m.fuse.b = Tensor<T>(Shape{4}, T(0));
        m.decode.w = detail::param_uniform<T>({1, 1, 1, C, cfg.num_classes}, C, rng);
        m.decode.b = Tensor<T>(Shape{cfg.num_classes}, T(0));
        m.decode.upsample = cfg.decode_upsample;
        return m;
    }

    std::vector<NamedTensor<T>> parameters() {
        std::vector<NamedTensor<T>> out;
        auto add = [&](const std::string& name, Tensor<T>& t) { out.push_back({name, t}); };
        auto add_stack2d = [&](const std::string& p, ConvStack2d<T>& s) {
            add(p + ".w1", s.w1);
            add(p + ".b1", s.b1);
            add(p + ".w2", s.w2);
            add(p + ".b2", s.b2);
        };
        auto add_stack3d = [&](const std::string& p, ConvStack3d<T>& s) {
            add(p + ".w1", s.w1);
            add(p + ".b1", s.b1);
            add(p + ".w2", s.w2);
            add(p + ".b2", s.b2);
        };
        auto add_attn = [&](const std::string& p, DeformableAttentionLayer<T>& l) {
            add(p + ".offset_w", l.offset_w);
            add(p + ".offset_b", l.offset_b);
            add(p + ".weight_w", l.weight_w);
            add(p + ".weight_b", l.weight_b);
            add(p + ".value_w", l.value_w);
            add(p + ".out_w", l.out_w);
            add(p + ".out_b", l.out_b);
            add(p + ".ln_gain", l.ln_gain);
            add(p + ".ln_bias", l.ln_bias);
        };
        add_stack2d("ctx", context_net);
        add_stack2d("depth.mono", depth_net.mono);
        add_stack2d("depth.stereo", depth_net.stereo);
        for (auto [prefix, a] : {std::pair{"depth.attn_m", &depth_net.attn_mono},
                                 std::pair{"depth.attn_s", &depth_net.attn_stereo}}) {
            add(std::string(prefix) + ".wq", a->wq);
            add(std::string(prefix) + ".wk", a->wk);
            add(std::string(prefix) + ".wv", a->wv);
        }
        add_stack2d("depth.fuse", depth_net.fuse);
        for (size_t i = 0; i < view.cross.size(); ++i)
            add_attn("cross." + std::to_string(i), view.cross[i]);
        for (size_t i = 0; i < view.self_diffusion.size(); ++i)
            add_attn("self." + std::to_string(i), view.self_diffusion[i]);
        add_stack3d("vox.block1", voxel.block1);
        add_stack3d("vox.block2", voxel.block2);
        for (auto [prefix, p] : {std::pair{"tpv.xy", &tpv.xy}, std::pair{"tpv.xz", &tpv.xz},
                                 std::pair{"tpv.yz", &tpv.yz}}) {
            add(std::string(prefix) + ".proj_w", p->s2c.proj_w);
            add(std::string(prefix) + ".proj_b", p->s2c.proj_b);
            add_stack2d(std::string(prefix) + ".refine", p->refine);
        }
        add("fuse.w", fuse.w);
        add("fuse.b", fuse.b);
        add("decode.w", decode.w);
        add("decode.b", decode.b);
        return out;
    }

    void set_requires_grad(bool b) {
        for (auto& p : parameters()) p.tensor.set_requires_grad(b);
    }
};

template <typename T>
struct ForwardResult {
    Tensor<T> depth_prob; // (H,W,depth_bins)
    Tensor<T> logits;     // (X,Y,Z,num_classes)
};

template <typename T>
Tensor<T> image_features_tensor(const SceneSample& sample, const PipelineConfig& cfg) {
    std::vector<T> v(sample.image_features.begin(), sample.image_features.end());
    return Tensor<T>(Shape{cfg.image_height, cfg.image_width, cfg.image_channels}, std::move(v));
}

template <typename T>
ForwardResult<T> forward(Model<T>& m, const SceneSample& sample) {
    const PipelineConfig& cfg = m.cfg;
    auto feats = image_features_tensor<T>(sample, cfg);
    std::vector<T> sd(sample.depth_stereo.values.begin(), sample.depth_stereo.values.end());
    Tensor<T> stereo(Shape{cfg.image_height, cfg.image_width}, std::move(sd));

    auto prob = refine_depth(feats, stereo, m.depth_net);
    auto ctx = apply_conv_stack(feats, m.context_net);
    auto f3d = run_view_transformer(ctx, prob, sample.depth_stereo.values, sample.cam,
                                    sample.grid.spec, m.view, cfg.mask_depth_stride);
    auto fvox = voxel_branch(f3d, m.voxel);
    auto planes = tpv_branch(f3d, m.tpv);
    auto ffinal = dynamic_fuse(fvox, planes, m.fuse);
    return {prob, decode_head(ffinal, m.decode)};
}

template <typename T>
LossBreakdown<T> compute_losses(const ForwardResult<T>& r, const SceneSample& sample,
                                const ClassWeighting& weights, const PipelineConfig& cfg) {
    auto ce = weighted_cross_entropy(r.logits, sample.grid, weights);
    auto geo = scal_loss(r.logits, sample.grid, ScalMode::Geometric);
    auto sem = scal_loss(r.logits, sample.grid, ScalMode::Semantic);
    auto depth = depth_loss(r.depth_prob, sample.depth_gt, sample.cam);
    return total_loss(ce, geo, sem, depth, static_cast<T>(cfg.lambda_depth));
}

struct TrainLogRow {
    int step = 0;
    double total = 0, ce = 0, scal_geo = 0, scal_sem = 0, depth = 0;
};

/// Plain gradient descent with optional momentum. One row per step with the
/// losses evaluated at the pre-update parameters. Throws NonFiniteLoss with
/// the offending step recorded.
template <typename T>
std::vector<TrainLogRow> train(Model<T>& m, const SceneSample& sample, int steps, double lr,
                               double momentum) {
    auto params = m.parameters();
    for (auto& p : params) p.tensor.set_requires_grad(true);
    const ClassWeighting weights = compute_class_weights(sample.grid);
    std::vector<std::vector<T>> velocity(params.size());
    for (size_t i = 0; i < params.size(); ++i)
        velocity[i].assign(params[i].tensor.size(), T(0));
    std::vector<TrainLogRow> log;
    for (int step = 0; step < steps; ++step) {
        for (auto& p : params) p.tensor.zero_grad();
        LossBreakdown<T> loss;
        try {
            auto result = forward(m, sample);
            loss = compute_losses(result, sample, weights, m.cfg);
            backward(loss.total);
        } catch (const NonFiniteValue& e) {
            throw NonFiniteLoss("step " + std::to_string(step) + ": " + e.what());
        } catch (const NonFinitePart& e) {
            throw NonFiniteLoss("step " + std::to_string(step) + ": " + e.what());
        }
        log.push_back({step, static_cast<double>(loss.total.item()),
                       static_cast<double>(loss.ce.item()),
                       static_cast<double>(loss.scal_geo.item()),
                       static_cast<double>(loss.scal_sem.item()),
                       static_cast<double>(loss.depth.item())});
        for (size_t i = 0; i < params.size(); ++i) {
            auto& value = params[i].tensor.mutable_values();
            const auto& grad = params[i].tensor.grad();
            auto& vel = velocity[i];
            for (size_t j = 0; j < value.size(); ++j) {
                vel[j] = static_cast<T>(momentum) * vel[j] - static_cast<T>(lr) * grad[j];
                value[j] += vel[j];
            }
        }
    }
    return log;
}

} // namespace ssc
