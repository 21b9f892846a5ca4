#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ssc/error.hpp"

namespace ssc {

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

struct Vec4 {
    double x = 0, y = 0, z = 0, w = 0;
};

/// Row-major 4x4 homogeneous transform.
struct Mat4 {
    std::array<double, 16> m{};

    static Mat4 identity() {
        Mat4 r;
        r.m = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
        return r;
    }

    double& at(int r, int c) { return m[r * 4 + c]; }
    double at(int r, int c) const { return m[r * 4 + c]; }

    Mat4 operator*(const Mat4& o) const {
        Mat4 r;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
                double acc = 0;
                for (int k = 0; k < 4; ++k) acc += at(i, k) * o.at(k, j);
                r.at(i, j) = acc;
            }
        return r;
    }

    Vec4 operator*(const Vec4& v) const {
        Vec4 r;
        r.x = m[0] * v.x + m[1] * v.y + m[2] * v.z + m[3] * v.w;
        r.y = m[4] * v.x + m[5] * v.y + m[6] * v.z + m[7] * v.w;
        r.z = m[8] * v.x + m[9] * v.y + m[10] * v.z + m[11] * v.w;
        r.w = m[12] * v.x + m[13] * v.y + m[14] * v.z + m[15] * v.w;
        return r;
    }

    /// Gauss-Jordan inverse; throws on singular input.
    Mat4 inverse() const {
        std::array<double, 32> a{};
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 4; ++c) a[r * 8 + c] = at(r, c);
            a[r * 8 + 4 + r] = 1.0;
        }
        for (int col = 0; col < 4; ++col) {
            int piv = col;
            for (int r = col + 1; r < 4; ++r)
                if (std::abs(a[r * 8 + col]) > std::abs(a[piv * 8 + col])) piv = r;
            if (std::abs(a[piv * 8 + col]) < 1e-14)
                throw Error("mat4: singular matrix has no inverse");
            if (piv != col)
                for (int c = 0; c < 8; ++c) std::swap(a[piv * 8 + c], a[col * 8 + c]);
            const double d = a[col * 8 + col];
            for (int c = 0; c < 8; ++c) a[col * 8 + c] /= d;
            for (int r = 0; r < 4; ++r) {
                if (r == col) continue;
                const double f = a[r * 8 + col];
                if (f == 0.0) continue;
                for (int c = 0; c < 8; ++c) a[r * 8 + c] -= f * a[col * 8 + c];
            }
        }
        Mat4 inv;
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) inv.at(r, c) = a[r * 8 + 4 + c];
        return inv;
    }
};

/// Continuous pixel-depth coordinate: image position plus depth-bin position.
struct PixelDepth {
    double u = 0, v = 0, bin = 0;
};

/// Pinhole camera with a discretized depth axis. `extrinsics` maps world to
/// camera coordinates (x right, y down, z forward).
struct CameraModel {
    Mat4 intrinsics = Mat4::identity();
    Mat4 extrinsics = Mat4::identity();
    int height = 0, width = 0;
    int depth_bins = 2;
    double d_min = 1.0, d_max = 2.0;

    void validate() const {
        if (intrinsics.at(0, 0) <= 0 || intrinsics.at(1, 1) <= 0)
            throw ConfigError("camera: focal lengths must be positive");
        if (height <= 0 || width <= 0) throw ConfigError("camera: empty image");
        if (depth_bins < 2) throw ConfigError("camera: need at least 2 depth bins");
        if (!(d_min < d_max)) throw ConfigError("camera: d_min must be below d_max");
        extrinsics.inverse(); // throws if not invertible
    }

    double bin_to_depth(double b) const {
        return d_min + b / (depth_bins - 1) * (d_max - d_min);
    }
    double depth_to_bin(double depth) const {
        return (depth - d_min) / (d_max - d_min) * (depth_bins - 1);
    }

    /// Pixel (u,v) at camera depth z back to a world point.
    Vec3 back_project(double u, double v, double z) const {
        if (z <= 0) throw NonPositiveDepth("back_project: depth must be positive");
        Vec4 pix{u * z, v * z, z, 1.0};
        Vec4 cam = intrinsics.inverse() * pix;
        Vec4 wld = extrinsics.inverse() * Vec4{cam.x, cam.y, cam.z, 1.0};
        return {wld.x, wld.y, wld.z};
    }

    /// World point to continuous pixel-depth coordinates. The bin coordinate
    /// is not clamped; callers decide how to treat out-of-range values.
    PixelDepth project_to_pixel(const Vec3& p) const {
        Vec4 cam = extrinsics * Vec4{p.x, p.y, p.z, 1.0};
        if (cam.z <= 0) throw BehindCamera("project_to_pixel: point behind camera");
        Vec4 img = intrinsics * cam;
        return {img.x / cam.z, img.y / cam.z, depth_to_bin(cam.z)};
    }

    bool in_image(double u, double v) const {
        return u >= 0 && u < width && v >= 0 && v < height;
    }
};

/// Precomputed inverses for hot loops that back-project many pixels.
struct CameraProjector {
    Mat4 k_inv, e_inv;

    explicit CameraProjector(const CameraModel& cam)
        : k_inv(cam.intrinsics.inverse()), e_inv(cam.extrinsics.inverse()) {}

    Vec3 back_project(double u, double v, double z) const {
        Vec4 cam = k_inv * Vec4{u * z, v * z, z, 1.0};
        Vec4 wld = e_inv * Vec4{cam.x, cam.y, cam.z, 1.0};
        return {wld.x, wld.y, wld.z};
    }
};

inline Mat4 make_intrinsics(double fx, double fy, double cx, double cy) {
    Mat4 k = Mat4::identity();
    k.at(0, 0) = fx;
    k.at(1, 1) = fy;
    k.at(0, 2) = cx;
    k.at(1, 2) = cy;
    return k;
}

/// Camera-from-world transform for a camera at `pos` looking along +Y of the
/// world with +Z up (x right, y down, z forward camera frame).
inline Mat4 make_look_along_y(const Vec3& pos) {
    Mat4 e = Mat4::identity();
    // rows: camera x = world x, camera y = -world z, camera z = world y
    e.m = {1, 0, 0, 0,
           0, 0, -1, 0,
           0, 1, 0, 0,
           0, 0, 0, 1};
    Vec4 t = e * Vec4{pos.x, pos.y, pos.z, 1.0};
    e.at(0, 3) = -t.x;
    e.at(1, 3) = -t.y;
    e.at(2, 3) = -t.z;
    return e;
}

/// World-to-index mapping for an axis-aligned voxel grid. Voxels are
/// half-open boxes [corner, corner + size) so every point belongs to exactly
/// one voxel.
struct VoxelGridSpec {
    Vec3 origin{};
    double voxel_size = 0.2;
    std::array<int64_t, 3> dims{1, 1, 1};

    void validate() const {
        if (voxel_size <= 0) throw ConfigError("grid: voxel_size must be positive");
        for (int64_t d : dims)
            if (d < 1) throw ConfigError("grid: dims must be at least 1");
    }

    int64_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }

    bool world_to_index(const Vec3& p, std::array<int64_t, 3>& out) const {
        const double fx = std::floor((p.x - origin.x) / voxel_size);
        const double fy = std::floor((p.y - origin.y) / voxel_size);
        const double fz = std::floor((p.z - origin.z) / voxel_size);
        out = {static_cast<int64_t>(fx), static_cast<int64_t>(fy), static_cast<int64_t>(fz)};
        return fx >= 0 && fy >= 0 && fz >= 0 && out[0] < dims[0] && out[1] < dims[1] &&
               out[2] < dims[2];
    }

    Vec3 index_to_center(const std::array<int64_t, 3>& i) const {
        return {origin.x + (i[0] + 0.5) * voxel_size, origin.y + (i[1] + 0.5) * voxel_size,
                origin.z + (i[2] + 0.5) * voxel_size};
    }

    int64_t flat(const std::array<int64_t, 3>& i) const {
        return (i[0] * dims[1] + i[1]) * dims[2] + i[2];
    }
};

/// One bit per voxel; true where at least one back-projected depth pixel
/// landed.
struct OccupancyMask {
    std::array<int64_t, 3> dims{0, 0, 0};
    std::vector<uint8_t> bits;

    int64_t count() const {
        int64_t n = 0;
        for (uint8_t b : bits) n += b ? 1 : 0;
        return n;
    }
    bool at(int64_t x, int64_t y, int64_t z) const {
        return bits[(x * dims[1] + y) * dims[2] + z] != 0;
    }
};

/// Per-voxel class labels, x-major with z innermost. Class 0 is free space;
/// 255 marks voxels excluded from losses and metrics.
struct SemanticVoxelGrid {
    static constexpr uint8_t kIgnore = 255;

    VoxelGridSpec spec;
    int num_classes = 2;
    std::vector<uint8_t> labels;

    void validate() const {
        spec.validate();
        if (num_classes < 2) throw ConfigError("grid: need at least 2 classes");
        if (static_cast<int64_t>(labels.size()) != spec.voxel_count())
            throw ShapeMismatch("grid: label count does not match dims");
        for (uint8_t l : labels)
            if (l != kIgnore && l >= num_classes)
                throw ConfigError("grid: label exceeds num_classes");
    }

    uint8_t at(int64_t x, int64_t y, int64_t z) const {
        return labels[(x * spec.dims[1] + y) * spec.dims[2] + z];
    }
    uint8_t& at(int64_t x, int64_t y, int64_t z) {
        return labels[(x * spec.dims[1] + y) * spec.dims[2] + z];
    }
    bool occupied(int64_t x, int64_t y, int64_t z) const {
        const uint8_t l = at(x, y, z);
        return l != 0 && l != kIgnore;
    }
};

/// Depth values <= 0 mean "no depth" and are skipped; points outside the grid
/// are dropped. `stride` samples every stride-th pixel in both directions.
inline OccupancyMask build_occupancy_mask(const std::vector<float>& depth_map,
                                          const CameraModel& cam, const VoxelGridSpec& grid,
                                          int stride = 1) {
    if (static_cast<int64_t>(depth_map.size()) != int64_t(cam.height) * cam.width)
        throw ShapeMismatch("build_occupancy_mask: depth map does not match camera image size");
    if (stride < 1) throw ConfigError("build_occupancy_mask: stride must be >= 1");
    OccupancyMask mask;
    mask.dims = grid.dims;
    mask.bits.assign(grid.voxel_count(), 0);
    for (int v = 0; v < cam.height; v += stride)
        for (int u = 0; u < cam.width; u += stride) {
            const double z = depth_map[int64_t(v) * cam.width + u];
            if (z <= 0) continue;
            const Vec3 p = cam.back_project(u, v, z);
            std::array<int64_t, 3> idx;
            if (grid.world_to_index(p, idx)) mask.bits[grid.flat(idx)] = 1;
        }
    return mask;
}

} // namespace ssc
