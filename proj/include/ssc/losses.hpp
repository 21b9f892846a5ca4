#pragma once

#include <cmath>
#include <vector>

#include "ssc/geometry.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

/// Per-class positive weights for the cross-entropy term.
struct ClassWeighting {
    std::vector<double> weights;

    void validate(int num_classes) const {
        if (static_cast<int>(weights.size()) != num_classes)
            throw ShapeMismatch("class weighting: weight count != num_classes");
        for (double w : weights)
            if (!(w > 0) || !std::isfinite(w))
                throw ConfigError("class weighting: weights must be positive and finite");
    }
};

/// 1 / log(1.02 + frequency) over the given grid's non-ignored voxels.
/// Classes absent from the grid get the weight of frequency zero.
inline ClassWeighting compute_class_weights(const SemanticVoxelGrid& grid) {
    std::vector<int64_t> counts(grid.num_classes, 0);
    int64_t total = 0;
    for (uint8_t l : grid.labels) {
        if (l == SemanticVoxelGrid::kIgnore) continue;
        ++counts[l];
        ++total;
    }
    ClassWeighting w;
    w.weights.resize(grid.num_classes);
    for (int c = 0; c < grid.num_classes; ++c) {
        const double freq = total == 0 ? 0.0 : static_cast<double>(counts[c]) / total;
        w.weights[c] = 1.0 / std::log(1.02 + freq);
    }
    return w;
}

/// Mean over non-ignored voxels of w_y * (-log softmax(logits)_y).
template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, const SemanticVoxelGrid& target,
                                 const ClassWeighting& weighting) {
    const int k = target.num_classes;
    if (logits.rank() != 4 || logits.dim(3) != k ||
        logits.dim(0) != target.spec.dims[0] || logits.dim(1) != target.spec.dims[1] ||
        logits.dim(2) != target.spec.dims[2])
        throw ShapeMismatch("weighted_cross_entropy: logits do not match target grid");
    weighting.validate(k);
    const int64_t v = target.spec.voxel_count();
    Tensor<T> weighted_onehot(Shape{v, k}, T(0));
    int64_t valid = 0;
    {
        auto& w = weighted_onehot.mutable_values();
        for (int64_t i = 0; i < v; ++i) {
            const uint8_t l = target.labels[i];
            if (l == SemanticVoxelGrid::kIgnore) continue;
            w[i * k + l] = static_cast<T>(weighting.weights[l]);
            ++valid;
        }
    }
    if (valid == 0) throw AllIgnored("weighted_cross_entropy: every voxel is ignored");
    auto logp = log_softmax(reshape(logits, {v, k}), 1);
    return mul(sum_all(mul(logp, weighted_onehot)), T(-1) / static_cast<T>(valid));
}

enum class ScalMode { Geometric, Semantic };

/// Scene- and class-affinity loss: -[log soft-precision + log soft-recall +
/// log soft-specificity], averaged over classes present in the target.
/// Geometric mode collapses classes to occupied-vs-free. Soft counts come
/// from softmax probabilities; ignored voxels are excluded throughout.
template <typename T>
Tensor<T> scal_loss(const Tensor<T>& logits, const SemanticVoxelGrid& target, ScalMode mode) {
    const int k = target.num_classes;
    if (logits.rank() != 4 || logits.dim(3) != k ||
        logits.dim(0) != target.spec.dims[0] || logits.dim(1) != target.spec.dims[1] ||
        logits.dim(2) != target.spec.dims[2])
        throw ShapeMismatch("scal_loss: logits do not match target grid");
    const int64_t v = target.spec.voxel_count();
    int64_t valid = 0;
    for (int64_t i = 0; i < v; ++i)
        if (target.labels[i] != SemanticVoxelGrid::kIgnore) ++valid;
    if (valid == 0) throw AllIgnored("scal_loss: every voxel is ignored");

    auto probs = softmax(reshape(logits, {v, k}), 1);

    // Per "class" to score: its probability column and its target indicator.
    struct ClassCase {
        Tensor<T> prob;      // (v,1)
        std::vector<int64_t> positives; // flat voxel ids with this label
    };
    std::vector<ClassCase> cases;
    if (mode == ScalMode::Semantic) {
        for (int c = 0; c < k; ++c) {
            ClassCase cc;
            cc.prob = slice(probs, 1, c, 1);
            for (int64_t i = 0; i < v; ++i)
                if (target.labels[i] == c) cc.positives.push_back(i);
            cases.push_back(std::move(cc));
        }
    } else {
        // occupied probability = 1 - p(free)
        Tensor<T> ones(Shape{v, 1}, T(1));
        ClassCase cc;
        cc.prob = sub(ones, slice(probs, 1, 0, 1));
        for (int64_t i = 0; i < v; ++i) {
            const uint8_t l = target.labels[i];
            if (l != 0 && l != SemanticVoxelGrid::kIgnore) cc.positives.push_back(i);
        }
        cases.push_back(std::move(cc));
    }

    Tensor<T> valid_mask(Shape{v, 1}, T(0));
    {
        auto& m = valid_mask.mutable_values();
        for (int64_t i = 0; i < v; ++i)
            if (target.labels[i] != SemanticVoxelGrid::kIgnore) m[i] = T(1);
    }

    Tensor<T> total = Tensor<T>::scalar(T(0));
    int present = 0;
    for (auto& cc : cases) {
        const int64_t pos_count = static_cast<int64_t>(cc.positives.size());
        if (pos_count == 0) continue; // absent class contributes nothing
        ++present;
        Tensor<T> t_pos(Shape{v, 1}, T(0));
        {
            auto& m = t_pos.mutable_values();
            for (int64_t i : cc.positives) m[i] = T(1);
        }
        const int64_t neg_count = valid - pos_count;
        auto nominator = sum_all(mul(cc.prob, t_pos));
        auto sum_p = sum_all(mul(cc.prob, valid_mask));
        // precision: nominator / sum of probabilities over valid voxels
        if (sum_p.item() > T(0))
            total = add(total, neg(log(div(nominator, sum_p))));
        // recall: nominator / count of positives
        total = add(total, neg(log(mul(nominator, T(1) / static_cast<T>(pos_count)))));
        // specificity: sum of (1-p) over valid negatives / count of negatives
        if (neg_count > 0) {
            auto t_neg = sub(valid_mask, t_pos);
            auto ones = Tensor<T>(Shape{v, 1}, T(1));
            auto spec_num = sum_all(mul(sub(ones, cc.prob), t_neg));
            total = add(total, neg(log(mul(spec_num, T(1) / static_cast<T>(neg_count)))));
        }
    }
    if (present == 0) throw AllIgnored("scal_loss: no class present in target");
    return mul(total, T(1) / static_cast<T>(present));
}

/// Cross-entropy between the estimated depth probability (H,W,D) and the
/// one-hot nearest bin of the ground-truth depth. Pixels with missing or
/// out-of-range depth are excluded; midpoint ties go to the lower bin.
template <typename T>
Tensor<T> depth_loss(const Tensor<T>& prob, const DepthMap& gt, const CameraModel& cam) {
    if (prob.rank() != 3 || prob.dim(0) != cam.height || prob.dim(1) != cam.width ||
        prob.dim(2) != cam.depth_bins)
        throw ShapeMismatch("depth_loss: prob must be (H,W,depth_bins)");
    if (gt.height != cam.height || gt.width != cam.width)
        throw ShapeMismatch("depth_loss: depth map does not match camera");
    const int64_t pixels = int64_t(cam.height) * cam.width;
    const int d = cam.depth_bins;
    Tensor<T> onehot(Shape{pixels, d}, T(0));
    int64_t valid = 0;
    {
        auto& m = onehot.mutable_values();
        for (int64_t p = 0; p < pixels; ++p) {
            const double z = gt.values[p];
            if (z <= 0) continue;
            const double b = cam.depth_to_bin(z);
            if (b < 0 || b > d - 1) continue;
            const int64_t bin = static_cast<int64_t>(std::ceil(b - 0.5));
            m[p * d + bin] = T(1);
            ++valid;
        }
    }
    if (valid == 0) throw AllIgnored("depth_loss: no pixel with usable depth");
    auto logp = log(reshape(prob, {pixels, d}));
    return mul(sum_all(mul(logp, onehot)), T(-1) / static_cast<T>(valid));
}

template <typename T>
struct LossBreakdown {
    Tensor<T> ce, scal_geo, scal_sem, depth, total;
};

/// total = lambda_d * depth + ce + geo + sem, accumulated in that order.
template <typename T>
LossBreakdown<T> total_loss(Tensor<T> ce, Tensor<T> scal_geo, Tensor<T> scal_sem,
                            Tensor<T> depth, T lambda_depth) {
    for (const Tensor<T>* part : {&ce, &scal_geo, &scal_sem, &depth})
        if (!std::isfinite(static_cast<double>(part->item())))
            throw NonFinitePart("total_loss: non-finite component");
    LossBreakdown<T> b;
    b.ce = ce;
    b.scal_geo = scal_geo;
    b.scal_sem = scal_sem;
    b.depth = depth;
    b.total = add(add(add(mul(depth, lambda_depth), ce), scal_geo), scal_sem);
    return b;
}

} // namespace ssc
