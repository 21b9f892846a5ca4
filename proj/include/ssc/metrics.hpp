#pragma once

#include <vector>

#include "ssc/geometry.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

struct SegmentationMetrics {
    double iou = 0.0;  // occupied-vs-free, any semantic class counts as occupied
    double miou = 0.0; // mean per-class IoU over classes present in gt or pred
    std::vector<double> per_class; // indexed by class id; -1 where absent from both
};

/// Confusion-count evaluation. Ignored gt voxels are excluded from every
/// count. mIoU averages over semantic classes (label >= 1) appearing in gt or
/// pred; with no such class the grids are trivially in agreement and both
/// scores default to 1.
inline SegmentationMetrics evaluate_iou_miou(const SemanticVoxelGrid& pred,
                                             const SemanticVoxelGrid& gt) {
    if (pred.spec.dims != gt.spec.dims)
        throw DimMismatch("evaluate_iou_miou: grid dims differ");
    const int k = std::max(pred.num_classes, gt.num_classes);
    std::vector<int64_t> tp(k, 0), fp(k, 0), fn(k, 0);
    int64_t occ_inter = 0, occ_union = 0;
    for (int64_t i = 0; i < gt.spec.voxel_count(); ++i) {
        const uint8_t t = gt.labels[i];
        if (t == SemanticVoxelGrid::kIgnore) continue;
        const uint8_t p = pred.labels[i];
        const bool t_occ = t != 0;
        const bool p_occ = p != 0 && p != SemanticVoxelGrid::kIgnore;
        if (t_occ && p_occ) ++occ_inter;
        if (t_occ || p_occ) ++occ_union;
        if (p == t) {
            ++tp[t];
        } else {
            ++fn[t];
            if (p != SemanticVoxelGrid::kIgnore) ++fp[p];
        }
    }
    SegmentationMetrics m;
    m.iou = occ_union == 0 ? 1.0 : static_cast<double>(occ_inter) / occ_union;
    m.per_class.assign(k, -1.0);
    double sum = 0.0;
    int present = 0;
    for (int c = 1; c < k; ++c) {
        const int64_t denom = tp[c] + fp[c] + fn[c];
        if (denom == 0) continue;
        m.per_class[c] = static_cast<double>(tp[c]) / denom;
        sum += m.per_class[c];
        ++present;
    }
    m.miou = present == 0 ? 1.0 : sum / present;
    return m;
}

/// Argmax decode of per-voxel class logits (X,Y,Z,K) into a label grid.
template <typename T>
SemanticVoxelGrid logits_to_grid(const Tensor<T>& logits, const VoxelGridSpec& spec,
                                 int num_classes) {
    if (logits.rank() != 4 || logits.dim(3) != num_classes)
        throw ShapeMismatch("logits_to_grid: expected (X,Y,Z,num_classes)");
    SemanticVoxelGrid g;
    g.spec = spec;
    g.spec.dims = {logits.dim(0), logits.dim(1), logits.dim(2)};
    g.num_classes = num_classes;
    const int64_t v = logits.dim(0) * logits.dim(1) * logits.dim(2);
    g.labels.resize(v);
    const T* p = logits.values().data();
    for (int64_t i = 0; i < v; ++i) {
        int best = 0;
        for (int c = 1; c < num_classes; ++c)
            if (p[i * num_classes + c] > p[i * num_classes + best]) best = c;
        g.labels[i] = static_cast<uint8_t>(best);
    }
    return g;
}

} // namespace ssc
