#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "ssc/error.hpp"
#include "ssc/geometry.hpp"

namespace ssc {

/// Every run-time knob of the pipeline. Keys use dotted sections; unknown
/// keys in a config file are errors so hyperparameter typos cannot pass
/// silently.
struct PipelineConfig {
    uint64_t seed = 1;
    std::string precision = "f32"; // f32 | f64

    int64_t grid_x = 32, grid_y = 32, grid_z = 8;
    double voxel_size = 0.2;
    double origin_x = 0.0, origin_y = 0.0, origin_z = 0.0;

    int image_height = 32, image_width = 32;
    double fx = 24.0, fy = 24.0, cx = 15.5, cy = 15.5;
    double cam_x = 3.2, cam_y = -2.0, cam_z = 0.8;

    int depth_bins = 16;
    double depth_min = 1.0, depth_max = 9.0;

    int channels = 16;        // C, voxel/context feature width
    int depth_channels = 16;  // C_d, depth-net feature width
    int image_channels = 8;   // width of the 2-D feature surrogate

    int attn_points = 8;  // N sampling points per query
    int cross_layers = 3; // deformable cross-attention layers
    int self_layers = 2;  // deformable self-attention layers

    int refine_window = 5; // neighborhood attention window (odd)
    int tpv_groups = 2;    // K groups for spatial-to-channel pooling
    int num_classes = 5;   // semantic classes incl. free (label 0)

    double lambda_depth = 0.001;
    int mask_depth_stride = 1; // depth-map subsampling when building the mask
    bool decode_upsample = false;

    int synth_boxes = 3;
    double synth_noise_sigma = 0.05;

    int train_steps = 200;
    double train_lr = 0.1;
    double train_momentum = 0.9;

    void validate() const {
        auto positive = [](double v, const char* what) {
            if (!(v > 0)) throw ConfigError(std::string(what) + " must be positive");
        };
        positive(static_cast<double>(grid_x), "grid.x");
        positive(static_cast<double>(grid_y), "grid.y");
        positive(static_cast<double>(grid_z), "grid.z");
        positive(voxel_size, "grid.voxel_size");
        positive(image_height, "image.height");
        positive(image_width, "image.width");
        positive(fx, "camera.fx");
        positive(fy, "camera.fy");
        if (depth_bins < 2) throw ConfigError("depth.bins must be at least 2");
        if (!(depth_min < depth_max)) throw ConfigError("depth.min must be below depth.max");
        positive(depth_min, "depth.min");
        positive(channels, "model.channels");
        positive(depth_channels, "model.depth_channels");
        positive(image_channels, "model.image_channels");
        positive(attn_points, "attn.points");
        positive(cross_layers, "attn.cross_layers");
        positive(self_layers, "attn.self_layers");
        if (refine_window < 1 || refine_window % 2 == 0)
            throw ConfigError("refine.window must be odd and >= 1");
        positive(tpv_groups, "tpv.groups");
        if (grid_x % tpv_groups || grid_y % tpv_groups || grid_z % tpv_groups)
            throw ConfigError("tpv.groups must divide every grid extent");
        if (num_classes < 2) throw ConfigError("classes.count must be at least 2");
        if (lambda_depth < 0) throw ConfigError("loss.lambda_depth must be non-negative");
        if (mask_depth_stride < 1) throw ConfigError("mask.depth_stride must be >= 1");
        if (synth_boxes < 0) throw ConfigError("synth.boxes must be non-negative");
        if (synth_noise_sigma < 0) throw ConfigError("synth.noise_sigma must be non-negative");
        if (train_steps < 0) throw ConfigError("train.steps must be non-negative");
        positive(train_lr, "train.lr");
        if (train_momentum < 0 || train_momentum >= 1)
            throw ConfigError("train.momentum must be in [0,1)");
        if (precision != "f32" && precision != "f64")
            throw ConfigError("precision must be f32 or f64");
        make_camera().validate();
        make_grid().validate();
    }

    CameraModel make_camera() const {
        CameraModel cam;
        cam.intrinsics = make_intrinsics(fx, fy, cx, cy);
        cam.extrinsics = make_look_along_y({cam_x, cam_y, cam_z});
        cam.height = image_height;
        cam.width = image_width;
        cam.depth_bins = depth_bins;
        cam.d_min = depth_min;
        cam.d_max = depth_max;
        return cam;
    }

    VoxelGridSpec make_grid() const {
        VoxelGridSpec g;
        g.origin = {origin_x, origin_y, origin_z};
        g.voxel_size = voxel_size;
        g.dims = {grid_x, grid_y, grid_z};
        return g;
    }

    std::string to_text() const;
    static PipelineConfig from_text(const std::string& text);
    static PipelineConfig from_file(const std::string& path);
};

namespace detail {

template <typename T>
struct ConfigField {
    const char* key;
    T PipelineConfig::* member;
};

inline constexpr ConfigField<int64_t> kInt64Fields[] = {
    {"grid.x", &PipelineConfig::grid_x},
    {"grid.y", &PipelineConfig::grid_y},
    {"grid.z", &PipelineConfig::grid_z},
};

inline constexpr ConfigField<int> kIntFields[] = {
    {"image.height", &PipelineConfig::image_height},
    {"image.width", &PipelineConfig::image_width},
    {"depth.bins", &PipelineConfig::depth_bins},
    {"model.channels", &PipelineConfig::channels},
    {"model.depth_channels", &PipelineConfig::depth_channels},
    {"model.image_channels", &PipelineConfig::image_channels},
    {"attn.points", &PipelineConfig::attn_points},
    {"attn.cross_layers", &PipelineConfig::cross_layers},
    {"attn.self_layers", &PipelineConfig::self_layers},
    {"refine.window", &PipelineConfig::refine_window},
    {"tpv.groups", &PipelineConfig::tpv_groups},
    {"classes.count", &PipelineConfig::num_classes},
    {"mask.depth_stride", &PipelineConfig::mask_depth_stride},
    {"synth.boxes", &PipelineConfig::synth_boxes},
    {"train.steps", &PipelineConfig::train_steps},
};

inline constexpr ConfigField<double> kDoubleFields[] = {
    {"grid.voxel_size", &PipelineConfig::voxel_size},
    {"grid.origin_x", &PipelineConfig::origin_x},
    {"grid.origin_y", &PipelineConfig::origin_y},
    {"grid.origin_z", &PipelineConfig::origin_z},
    {"camera.fx", &PipelineConfig::fx},
    {"camera.fy", &PipelineConfig::fy},
    {"camera.cx", &PipelineConfig::cx},
    {"camera.cy", &PipelineConfig::cy},
    {"camera.pos_x", &PipelineConfig::cam_x},
    {"camera.pos_y", &PipelineConfig::cam_y},
    {"camera.pos_z", &PipelineConfig::cam_z},
    {"depth.min", &PipelineConfig::depth_min},
    {"depth.max", &PipelineConfig::depth_max},
    {"loss.lambda_depth", &PipelineConfig::lambda_depth},
    {"synth.noise_sigma", &PipelineConfig::synth_noise_sigma},
    {"train.lr", &PipelineConfig::train_lr},
    {"train.momentum", &PipelineConfig::train_momentum},
};

} // namespace detail

inline std::string PipelineConfig::to_text() const {
    std::ostringstream os;
    os << "seed=" << seed << "\n";
    os << "precision=" << precision << "\n";
    for (const auto& f : detail::kInt64Fields) os << f.key << "=" << this->*f.member << "\n";
    for (const auto& f : detail::kIntFields) os << f.key << "=" << this->*f.member << "\n";
    os.precision(17);
    for (const auto& f : detail::kDoubleFields) os << f.key << "=" << this->*f.member << "\n";
    os << "decode.upsample=" << (decode_upsample ? 1 : 0) << "\n";
    return os.str();
}

inline PipelineConfig PipelineConfig::from_text(const std::string& text) {
    PipelineConfig cfg;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const char* ws = " \t\r";
            const size_t b = s.find_first_not_of(ws);
            if (b == std::string::npos) return std::string();
            return s.substr(b, s.find_last_not_of(ws) - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        auto parse_ll = [&](const std::string& v) {
            size_t pos = 0;
            long long x = std::stoll(v, &pos);
            if (pos != v.size()) throw ConfigError("config: bad integer for " + key);
            return x;
        };
        auto parse_d = [&](const std::string& v) {
            size_t pos = 0;
            double x = std::stod(v, &pos);
            if (pos != v.size()) throw ConfigError("config: bad number for " + key);
            return x;
        };
        bool found = false;
        if (key == "seed") {
            cfg.seed = static_cast<uint64_t>(std::stoull(val));
            found = true;
        } else if (key == "precision") {
            cfg.precision = val;
            found = true;
        } else if (key == "decode.upsample") {
            cfg.decode_upsample = parse_ll(val) != 0;
            found = true;
        }
        if (!found)
            for (const auto& f : detail::kInt64Fields)
                if (key == f.key) {
                    cfg.*f.member = parse_ll(val);
                    found = true;
                    break;
                }
        if (!found)
            for (const auto& f : detail::kIntFields)
                if (key == f.key) {
                    cfg.*f.member = static_cast<int>(parse_ll(val));
                    found = true;
                    break;
                }
        if (!found)
            for (const auto& f : detail::kDoubleFields)
                if (key == f.key) {
                    cfg.*f.member = parse_d(val);
                    found = true;
                    break;
                }
        if (!found) throw ConfigError("config: unknown key '" + key + "'");
    }
    return cfg;
}

inline PipelineConfig PipelineConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str());
}

} // namespace ssc
