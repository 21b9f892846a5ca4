#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ssc/tensor.hpp"

namespace ssc {

/// Central-difference gradient of a scalar-valued computation with respect to
/// x. `eval` must recompute the forward value from x's current contents; x is
/// perturbed in place and restored. Independent of the reverse-mode path.
template <typename T>
std::vector<double> finite_difference_gradient(const std::function<double()>& eval,
                                               Tensor<T>& x, double eps = 1e-5) {
    std::vector<double> grad(x.size());
    auto& vals = x.mutable_values();
    for (int64_t i = 0; i < x.size(); ++i) {
        const T saved = vals[i];
        vals[i] = saved + static_cast<T>(eps);
        const double fp = eval();
        vals[i] = saved - static_cast<T>(eps);
        const double fm = eval();
        vals[i] = saved;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

/// Per-coordinate relative error with an absolute floor: coordinates smaller
/// than `floor_` in both gradients are compared against the floor instead.
inline double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& fd,
                            double floor_ = 1e-3) {
    double worst = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(fd[i]), floor_});
        worst = std::max(worst, std::abs(analytic[i] - fd[i]) / denom);
    }
    return worst;
}

struct GradCheckResult {
    std::string op;
    double max_rel_err = 0.0;
    bool pass = false;
};

/// Checks reverse-mode gradients of `forward_scalar` against central
/// differences for every listed leaf. The forward closure must rebuild the
/// graph from the leaves' current values on every call.
template <typename T>
GradCheckResult check_gradients(const std::string& op_name,
                                const std::function<Tensor<T>()>& forward_scalar,
                                std::vector<Tensor<T>> leaves, double eps = 1e-5,
                                double tol = 1e-4) {
    for (auto& leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    Tensor<T> loss = forward_scalar();
    backward(loss);
    double worst = 0.0;
    auto eval = [&]() { return static_cast<double>(forward_scalar().item()); };
    for (auto& leaf : leaves) {
        std::vector<double> analytic(leaf.size());
        const auto& g = leaf.grad();
        for (int64_t i = 0; i < leaf.size(); ++i) analytic[i] = static_cast<double>(g[i]);
        std::vector<double> fd = finite_difference_gradient<T>(eval, leaf, eps);
        worst = std::max(worst, max_rel_error(analytic, fd));
    }
    return GradCheckResult{op_name, worst, worst < tol};
}

} // namespace ssc
