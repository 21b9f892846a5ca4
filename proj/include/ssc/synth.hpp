#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "ssc/config.hpp"
#include "ssc/conv.hpp"
#include "ssc/geometry.hpp"
#include "ssc/io.hpp"
#include "ssc/rng.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

/// One synthetic training example. Everything derives deterministically from
/// (seed, config): grid layout, rendered depth, noisy "stereo" depth and the
/// 2-D feature surrogate standing in for an image backbone.
struct SceneSample {
    SemanticVoxelGrid grid;
    CameraModel cam;
    DepthMap depth_gt;              // noiseless render
    DepthMap depth_stereo;          // depth_gt + seeded gaussian noise
    std::vector<double> image_features; // H x W x image_channels, row-major
    int feature_channels = 0;
};

/// Per-pixel ray march against the occupancy of `grid`, stepping along the
/// camera depth axis with step <= voxel_size/4. Returns 0 where nothing is
/// hit before d_max. `hit_class`, when given, receives the label image.
inline DepthMap render_depth(const SemanticVoxelGrid& grid, const CameraModel& cam,
                             std::vector<uint8_t>* hit_class = nullptr) {
    DepthMap out;
    out.height = cam.height;
    out.width = cam.width;
    out.values.assign(int64_t(cam.height) * cam.width, 0.0f);
    if (hit_class) hit_class->assign(out.values.size(), 0);
    const CameraProjector proj(cam);
    const double step = grid.spec.voxel_size / 4.0;
    for (int v = 0; v < cam.height; ++v)
        for (int u = 0; u < cam.width; ++u) {
            for (double z = step; z <= cam.d_max; z += step) {
                const Vec3 p = proj.back_project(u, v, z);
                std::array<int64_t, 3> idx;
                if (!grid.spec.world_to_index(p, idx)) continue;
                const uint8_t label = grid.labels[grid.spec.flat(idx)];
                if (label != 0 && label != SemanticVoxelGrid::kIgnore) {
                    out.values[int64_t(v) * cam.width + u] = static_cast<float>(z);
                    if (hit_class) (*hit_class)[int64_t(v) * cam.width + u] = label;
                    break;
                }
            }
        }
    return out;
}

namespace detail {

/// Class-index render -> one-hot plus noise -> fixed seeded 3x3 conv + relu.
/// The conv weights are frozen (not trained); they only mix the one-hot
/// channels so the features carry class signal like a backbone output would.
inline std::vector<double> make_feature_surrogate(const std::vector<uint8_t>& class_image,
                                                  int height, int width, int num_classes,
                                                  int out_channels, Rng rng) {
    Tensor<double> onehot(Shape{height, width, num_classes}, 0.0);
    {
        auto& v = onehot.mutable_values();
        for (int64_t p = 0; p < int64_t(height) * width; ++p) {
            v[p * num_classes + class_image[p]] = 1.0;
            for (int c = 0; c < num_classes; ++c) v[p * num_classes + c] += rng.uniform(-0.05, 0.05);
        }
    }
    Tensor<double> kernel(Shape{3, 3, num_classes, out_channels});
    {
        auto& k = kernel.mutable_values();
        const double bound = 1.0 / std::sqrt(9.0 * num_classes);
        for (auto& x : k) x = rng.uniform(-bound, bound);
    }
    auto feat = relu(conv2d(onehot, kernel, 1, 1));
    return std::vector<double>(feat.values().begin(), feat.values().end());
}

} // namespace detail

/// Ground plane plus seeded axis-aligned boxes of random classes; renders
/// depth, derives a noisy stereo stand-in and the feature surrogate.
inline SceneSample generate_scene(uint64_t seed, const PipelineConfig& cfg) {
    if (cfg.num_classes < 2) throw ConfigError("generate_scene: need at least 2 classes");
    SceneSample s;
    s.cam = cfg.make_camera();
    s.grid.spec = cfg.make_grid();
    s.grid.num_classes = cfg.num_classes;
    const auto dims = s.grid.spec.dims;
    s.grid.labels.assign(s.grid.spec.voxel_count(), 0);

    // ground plane: the bottom voxel layer, class 1
    for (int64_t x = 0; x < dims[0]; ++x)
        for (int64_t y = 0; y < dims[1]; ++y) s.grid.at(x, y, 0) = 1;

    Rng layout = Rng(seed).fork(1);
    for (int b = 0; b < cfg.synth_boxes; ++b) {
        const int64_t sx = 2 + static_cast<int64_t>(layout.next_u64() % std::max<int64_t>(1, dims[0] / 4));
        const int64_t sy = 2 + static_cast<int64_t>(layout.next_u64() % std::max<int64_t>(1, dims[1] / 4));
        const int64_t sz = 1 + static_cast<int64_t>(layout.next_u64() % std::max<int64_t>(1, dims[2] / 2));
        const int64_t x0 = static_cast<int64_t>(layout.next_u64() % std::max<int64_t>(1, dims[0] - sx));
        const int64_t y0 = static_cast<int64_t>(layout.next_u64() % std::max<int64_t>(1, dims[1] - sy));
        const int64_t z0 = 1 + static_cast<int64_t>(layout.next_u64() %
                                                    std::max<int64_t>(1, dims[2] - sz));
        const uint8_t cls = static_cast<uint8_t>(1 + layout.next_u64() % (cfg.num_classes - 1));
        for (int64_t x = x0; x < x0 + sx; ++x)
            for (int64_t y = y0; y < y0 + sy; ++y)
                for (int64_t z = z0; z < std::min(z0 + sz, dims[2]); ++z) s.grid.at(x, y, z) = cls;
    }

    std::vector<uint8_t> class_image;
    s.depth_gt = render_depth(s.grid, s.cam, &class_image);

    Rng noise = Rng(seed).fork(2);
    s.depth_stereo = s.depth_gt;
    for (auto& d : s.depth_stereo.values)
        if (d > 0) d = static_cast<float>(d + noise.normal(0.0, cfg.synth_noise_sigma));

    s.feature_channels = cfg.image_channels;
    s.image_features = detail::make_feature_surrogate(class_image, cfg.image_height,
                                                      cfg.image_width, cfg.num_classes,
                                                      cfg.image_channels, Rng(seed).fork(3));
    return s;
}

/// Re-derives the in-memory sample from files written by the synth command.
/// The class render and feature surrogate are recomputed from the loaded
/// grid, so a written scene loads to the same sample that produced it.
inline SceneSample load_scene(const std::string& dir, const PipelineConfig& cfg) {
    SceneSample s;
    s.cam = cfg.make_camera();
    s.grid = read_vxg1(dir + "/scene.vxg");
    s.grid.spec.origin = {cfg.origin_x, cfg.origin_y, cfg.origin_z};
    s.grid.spec.voxel_size = cfg.voxel_size;
    s.depth_gt = read_dpm1(dir + "/depth_gt.dpm");
    s.depth_stereo = read_dpm1(dir + "/depth_stereo.dpm");
    if (s.depth_gt.height != cfg.image_height || s.depth_gt.width != cfg.image_width)
        throw ShapeMismatch("load_scene: depth map does not match configured image size");
    std::vector<uint8_t> class_image;
    render_depth(s.grid, s.cam, &class_image);
    s.feature_channels = cfg.image_channels;
    s.image_features = detail::make_feature_surrogate(class_image, cfg.image_height,
                                                      cfg.image_width, cfg.num_classes,
                                                      cfg.image_channels, Rng(cfg.seed).fork(3));
    return s;
}

} // namespace ssc
