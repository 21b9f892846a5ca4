#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ssc/error.hpp"
#include "ssc/geometry.hpp"
#include "ssc/tensor.hpp"

// File formats are defined on little-endian hosts; raw values are written
// as-is.

namespace ssc {

struct DepthMap {
    int height = 0, width = 0;
    std::vector<float> values; // meters, row-major (v outer, u inner); <= 0 means missing

    float at(int v, int u) const { return values[int64_t(v) * width + u]; }
};

// --- DPM1: "DPM1 <H> <W>\n" + H*W little-endian float32 ---------------------

inline void write_dpm1(const std::string& path, const DepthMap& d) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "DPM1 " << d.height << " " << d.width << "\n";
    f.write(reinterpret_cast<const char*>(d.values.data()),
            static_cast<std::streamsize>(d.values.size() * sizeof(float)));
    if (!f) throw IoError("write failed: " + path);
}

inline DepthMap read_dpm1(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string magic;
    DepthMap d;
    f >> magic >> d.height >> d.width;
    if (magic != "DPM1" || d.height <= 0 || d.width <= 0)
        throw IoError("bad DPM1 header: " + path);
    f.get(); // consume newline
    d.values.resize(int64_t(d.height) * d.width);
    f.read(reinterpret_cast<char*>(d.values.data()),
           static_cast<std::streamsize>(d.values.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(d.values.size() * sizeof(float)))
        throw IoError("truncated DPM1 payload: " + path);
    return d;
}

// --- VXG1: "VXG1 <X> <Y> <Z> <num_classes>\n" + X*Y*Z label bytes -----------

inline void write_vxg1(const std::string& path, const SemanticVoxelGrid& g) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "VXG1 " << g.spec.dims[0] << " " << g.spec.dims[1] << " " << g.spec.dims[2] << " "
      << g.num_classes << "\n";
    f.write(reinterpret_cast<const char*>(g.labels.data()),
            static_cast<std::streamsize>(g.labels.size()));
    if (!f) throw IoError("write failed: " + path);
}

/// Reads labels only; spec metadata (origin, voxel size) comes from config.
inline SemanticVoxelGrid read_vxg1(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string magic;
    SemanticVoxelGrid g;
    int64_t x = 0, y = 0, z = 0;
    f >> magic >> x >> y >> z >> g.num_classes;
    if (magic != "VXG1" || x <= 0 || y <= 0 || z <= 0 || g.num_classes < 2)
        throw IoError("bad VXG1 header: " + path);
    f.get();
    g.spec.dims = {x, y, z};
    g.labels.resize(x * y * z);
    f.read(reinterpret_cast<char*>(g.labels.data()),
           static_cast<std::streamsize>(g.labels.size()));
    if (f.gcount() != static_cast<std::streamsize>(g.labels.size()))
        throw IoError("truncated VXG1 payload: " + path);
    return g;
}

// --- Checkpoint: ASCII manifest + raw float64 payload -----------------------
//
//   CKPT1 <num_tensors>\n
//   <name> <rank> <d0> <d1> ...\n   (one line per tensor, manifest order)
//   <raw little-endian float64 values, manifest order>

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
void write_checkpoint(const std::string& path, const std::vector<NamedTensor<T>>& params) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "CKPT1 " << params.size() << "\n";
    for (const auto& p : params) {
        f << p.name << " " << p.tensor.rank();
        for (int64_t d : p.tensor.shape()) f << " " << d;
        f << "\n";
    }
    for (const auto& p : params) {
        std::vector<double> buf(p.tensor.values().begin(), p.tensor.values().end());
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(double)));
    }
    if (!f) throw IoError("write failed: " + path);
}

/// Loads values into the given parameter list; names and shapes must match
/// the manifest exactly.
template <typename T>
void read_checkpoint(const std::string& path, std::vector<NamedTensor<T>>& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string magic;
    size_t count = 0;
    f >> magic >> count;
    if (magic != "CKPT1") throw IoError("bad checkpoint header: " + path);
    if (count != params.size())
        throw IoError("checkpoint tensor count mismatch: " + path);
    for (auto& p : params) {
        std::string name;
        int rank = 0;
        f >> name >> rank;
        if (name != p.name || rank != p.tensor.rank())
            throw IoError("checkpoint manifest mismatch at " + p.name);
        for (int i = 0; i < rank; ++i) {
            int64_t d = 0;
            f >> d;
            if (d != p.tensor.dim(i)) throw IoError("checkpoint shape mismatch at " + p.name);
        }
    }
    f.get();
    for (auto& p : params) {
        std::vector<double> buf(p.tensor.size());
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(double)));
        if (f.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(double)))
            throw IoError("truncated checkpoint payload: " + path);
        auto& dst = p.tensor.mutable_values();
        for (size_t i = 0; i < buf.size(); ++i) dst[i] = static_cast<T>(buf[i]);
    }
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << content;
    if (!f) throw IoError("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace ssc
