#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ssc/error.hpp"

namespace ssc {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline Shape row_major_strides(const Shape& s) {
    Shape st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * s[i + 1];
    return st;
}

/// Trailing-dimension (numpy) broadcast of two shapes.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (size_t i = 0; i < rank; ++i) {
        int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeMismatch(std::string(op) + ": cannot broadcast " + shape_str(a) +
                                " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

/// Strides of `in` viewed through `out` (0 on broadcast axes), aligned right.
inline Shape broadcast_strides(const Shape& in, const Shape& out) {
    Shape in_st = row_major_strides(in);
    Shape st(out.size(), 0);
    size_t off = out.size() - in.size();
    for (size_t i = 0; i < in.size(); ++i)
        st[off + i] = in[i] == 1 ? 0 : in_st[i];
    return st;
}

/// Walks every index of `shape` in row-major order, maintaining two mapped
/// offsets. f(out_linear, a_off, b_off).
template <class F>
inline void for_each_broadcast(const Shape& shape, const Shape& sa, const Shape& sb, F&& f) {
    const int rank = static_cast<int>(shape.size());
    const int64_t n = numel(shape);
    Shape idx(rank, 0);
    int64_t a_off = 0, b_off = 0;
    for (int64_t o = 0; o < n; ++o) {
        f(o, a_off, b_off);
        for (int ax = rank - 1; ax >= 0; --ax) {
            ++idx[ax];
            a_off += sa[ax];
            b_off += sb[ax];
            if (idx[ax] < shape[ax]) break;
            a_off -= sa[ax] * shape[ax];
            b_off -= sb[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

inline uint64_t next_node_seq() {
    static uint64_t counter = 0;
    return ++counter;
}

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    uint64_t seq = 0;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

/// Dense N-D array handle. Value semantics on the handle, shared storage
/// underneath; operations record gradient rules when any input requires grad.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) {
        node_ = std::make_shared<Node<T>>();
        node_->shape = std::move(shape);
        node_->value.assign(numel(node_->shape), fill);
        node_->seq = next_node_seq();
    }

    Tensor(Shape shape, std::vector<T> values) {
        if (numel(shape) != static_cast<int64_t>(values.size()))
            throw ShapeMismatch("tensor: " + shape_str(shape) + " does not hold " +
                                std::to_string(values.size()) + " values");
        node_ = std::make_shared<Node<T>>();
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->seq = next_node_seq();
    }

    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t dim(int i) const { return node_->shape[i]; }
    int64_t size() const { return static_cast<int64_t>(node_->value.size()); }

    const std::vector<T>& values() const { return node_->value; }
    std::vector<T>& mutable_values() { return node_->value; }

    T item() const {
        if (size() != 1) throw ShapeMismatch("item: tensor is not scalar");
        return node_->value[0];
    }

    Tensor& set_requires_grad(bool b) {
        node_->requires_grad = b;
        return *this;
    }
    bool requires_grad() const { return node_->requires_grad; }

    bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
    const std::vector<T>& grad() const {
        if (!has_grad()) throw Error("grad: not populated");
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

    std::shared_ptr<Node<T>> node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

template <typename T>
inline void check_finite(const std::vector<T>& v, const char* op) {
    for (const T x : v)
        if (!std::isfinite(static_cast<double>(x)))
            throw NonFiniteValue(std::string(op) + ": non-finite value produced");
}

/// Builds an op result node. Parents and the gradient rule are recorded only
/// when some input participates in differentiation.
template <typename T>
inline Tensor<T> make_op(const char* name, Shape shape, std::vector<T> value,
                         std::vector<Tensor<T>> inputs,
                         std::function<void(Node<T>&)> backward_fn) {
    check_finite(value, name);
    Tensor<T> out(std::move(shape), std::move(value));
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    if (needs) {
        out.set_requires_grad(true);
        auto node = out.node();
        for (const auto& t : inputs) node->parents.push_back(t.node());
        node->backward_fn = std::move(backward_fn);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, class FwdF, class BwdF>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b,
                    FwdF fwd, BwdF bwd) {
    Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
    Shape sa = broadcast_strides(a.shape(), out_shape);
    Shape sb = broadcast_strides(b.shape(), out_shape);
    std::vector<T> out(numel(out_shape));
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    if (a.shape() == b.shape()) {
        for (int64_t i = 0; i < static_cast<int64_t>(out.size()); ++i)
            out[i] = fwd(pa[i], pb[i]);
    } else {
        for_each_broadcast(out_shape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
            out[o] = fwd(pa[ia], pb[ib]);
        });
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op<T>(
        name, out_shape, std::move(out), {a, b},
        [an, bn, out_shape, sa, sb, bwd](Node<T>& self) {
            const T* g = self.grad.data();
            const T* pa = an->value.data();
            const T* pb = bn->value.data();
            T* ga = nullptr;
            T* gb = nullptr;
            if (an->requires_grad) { an->ensure_grad(); ga = an->grad.data(); }
            if (bn->requires_grad) { bn->ensure_grad(); gb = bn->grad.data(); }
            for_each_broadcast(out_shape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
                T da, db;
                bwd(pa[ia], pb[ib], g[o], da, db);
                if (ga) ga[ia] += da;
                if (gb) gb[ib] += db;
            });
        });
}

template <typename T, class FwdF, class BwdF>
Tensor<T> unary_op(const char* name, const Tensor<T>& a, FwdF fwd, BwdF bwd) {
    std::vector<T> out(a.size());
    const T* pa = a.values().data();
    for (int64_t i = 0; i < a.size(); ++i) out[i] = fwd(pa[i]);
    auto an = a.node();
    return make_op<T>(name, a.shape(), std::move(out), {a}, [an, bwd](Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const T* g = self.grad.data();
        const T* x = an->value.data();
        const T* y = self.value.data();
        T* ga = an->grad.data();
        for (size_t i = 0; i < self.value.size(); ++i) ga[i] += bwd(x[i], y[i], g[i]);
    });
}

} // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "add", a, b, [](T x, T y) { return x + y; },
        [](T, T, T g, T& da, T& db) { da = g; db = g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "sub", a, b, [](T x, T y) { return x - y; },
        [](T, T, T g, T& da, T& db) { da = g; db = -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "mul", a, b, [](T x, T y) { return x * y; },
        [](T x, T y, T g, T& da, T& db) { da = g * y; db = g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "div", a, b, [](T x, T y) { return x / y; },
        [](T x, T y, T g, T& da, T& db) {
            da = g / y;
            db = -g * x / (y * y);
        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, T s) {
    return detail::unary_op<T>("add_s", a, [s](T x) { return x + s; },
                               [](T, T, T g) { return g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, T s) {
    return detail::unary_op<T>("mul_s", a, [s](T x) { return x * s; },
                               [s](T, T, T g) { return g * s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) { return mul(a, T(-1)); }

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::unary_op<T>("exp", a, [](T x) { return std::exp(x); },
                               [](T, T y, T g) { return g * y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    return detail::unary_op<T>("log", a, [](T x) { return std::log(x); },
                               [](T x, T, T g) { return g / x; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary_op<T>("relu", a, [](T x) { return x > T(0) ? x : T(0); },
                               [](T x, T, T g) { return x > T(0) ? g : T(0); });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (numel(new_shape) != a.size())
        throw ShapeMismatch("reshape: " + shape_str(a.shape()) + " -> " + shape_str(new_shape));
    auto an = a.node();
    return make_op<T>("reshape", std::move(new_shape), a.values(), {a}, [an](Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& a, const Shape& target) {
    Shape check = broadcast_shape(a.shape(), target, "broadcast_to");
    if (check != target)
        throw ShapeMismatch("broadcast_to: " + shape_str(a.shape()) + " -> " + shape_str(target));
    Shape sa = broadcast_strides(a.shape(), target);
    Shape zero(target.size(), 0);
    std::vector<T> out(numel(target));
    const T* pa = a.values().data();
    for_each_broadcast(target, sa, zero, [&](int64_t o, int64_t ia, int64_t) { out[o] = pa[ia]; });
    auto an = a.node();
    return make_op<T>("broadcast_to", target, std::move(out), {a},
                      [an, target, sa, zero](Node<T>& self) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          T* ga = an->grad.data();
                          const T* g = self.grad.data();
                          for_each_broadcast(target, sa, zero,
                                             [&](int64_t o, int64_t ia, int64_t) { ga[ia] += g[o]; });
                      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeMismatch("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    int rank = static_cast<int>(s0.size());
    if (axis < 0 || axis >= rank) throw ShapeMismatch("concat: bad axis");
    Shape out_shape = s0;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank) throw ShapeMismatch("concat: rank mismatch");
        for (int i = 0; i < rank; ++i)
            if (i != axis && p.shape()[i] != s0[i])
                throw ShapeMismatch("concat: extent mismatch off-axis");
        out_shape[axis] += p.shape()[axis];
    }
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[i];
    for (int i = axis + 1; i < rank; ++i) inner *= out_shape[i];
    std::vector<T> out(numel(out_shape));
    int64_t axis_off = 0;
    for (const auto& p : parts) {
        int64_t pa = p.shape()[axis];
        const T* src = p.values().data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(src + o * pa * inner, src + (o + 1) * pa * inner,
                      out.data() + (o * out_shape[axis] + axis_off) * inner);
        axis_off += pa;
    }
    std::vector<std::shared_ptr<Node<T>>> nodes;
    std::vector<int64_t> extents;
    for (const auto& p : parts) { nodes.push_back(p.node()); extents.push_back(p.shape()[axis]); }
    int64_t total_axis = out_shape[axis];
    return make_op<T>("concat", out_shape, std::move(out), parts,
                      [nodes, extents, outer, inner, total_axis](Node<T>& self) {
                          const T* g = self.grad.data();
                          int64_t axis_off = 0;
                          for (size_t pi = 0; pi < nodes.size(); ++pi) {
                              auto& n = nodes[pi];
                              int64_t pa = extents[pi];
                              if (n->requires_grad) {
                                  n->ensure_grad();
                                  T* gp = n->grad.data();
                                  for (int64_t o = 0; o < outer; ++o) {
                                      const T* gs = g + (o * total_axis + axis_off) * inner;
                                      T* gd = gp + o * pa * inner;
                                      for (int64_t i = 0; i < pa * inner; ++i) gd[i] += gs[i];
                                  }
                              }
                              axis_off += pa;
                          }
                      });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, int64_t start, int64_t len) {
    const Shape& s = a.shape();
    int rank = static_cast<int>(s.size());
    if (axis < 0 || axis >= rank || start < 0 || start + len > s[axis])
        throw IndexOutOfRange("slice: range out of bounds");
    Shape out_shape = s;
    out_shape[axis] = len;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < rank; ++i) inner *= s[i];
    std::vector<T> out(numel(out_shape));
    const T* src = a.values().data();
    for (int64_t o = 0; o < outer; ++o)
        std::copy(src + (o * s[axis] + start) * inner, src + (o * s[axis] + start + len) * inner,
                  out.data() + o * len * inner);
    auto an = a.node();
    int64_t axis_extent = s[axis];
    return make_op<T>("slice", out_shape, std::move(out), {a},
                      [an, outer, inner, start, len, axis_extent](Node<T>& self) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          T* ga = an->grad.data();
                          const T* g = self.grad.data();
                          for (int64_t o = 0; o < outer; ++o) {
                              T* gd = ga + (o * axis_extent + start) * inner;
                              const T* gs = g + o * len * inner;
                              for (int64_t i = 0; i < len * inner; ++i) gd[i] += gs[i];
                          }
                      });
}

/// Rows of `a` (first axis) selected by index, in order.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int64_t>& idx) {
    const Shape& s = a.shape();
    if (s.empty()) throw ShapeMismatch("gather_rows: rank-0 input");
    int64_t row = a.size() / s[0];
    for (int64_t i : idx)
        if (i < 0 || i >= s[0]) throw IndexOutOfRange("gather_rows: row index out of range");
    Shape out_shape = s;
    out_shape[0] = static_cast<int64_t>(idx.size());
    std::vector<T> out(out_shape[0] * row);
    const T* src = a.values().data();
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy(src + idx[i] * row, src + (idx[i] + 1) * row, out.data() + i * row);
    auto an = a.node();
    return make_op<T>("gather_rows", out_shape, std::move(out), {a}, [an, idx, row](Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        T* ga = an->grad.data();
        const T* g = self.grad.data();
        for (size_t i = 0; i < idx.size(); ++i) {
            T* gd = ga + idx[i] * row;
            const T* gs = g + i * row;
            for (int64_t j = 0; j < row; ++j) gd[j] += gs[j];
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T acc = T(0);
    for (const T x : a.values()) acc += x;
    auto an = a.node();
    return make_op<T>("sum", Shape{1}, std::vector<T>{acc}, {a}, [an](Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const T g = self.grad[0];
        for (auto& v : an->grad) v += g;
    });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return mul(sum_all(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a, int axis, bool keepdim = false) {
    const Shape& s = a.shape();
    int rank = static_cast<int>(s.size());
    if (axis < 0 || axis >= rank) throw ShapeMismatch("reduce_sum: bad axis");
    int64_t outer = 1, inner = 1, n = s[axis];
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < rank; ++i) inner *= s[i];
    Shape out_shape;
    for (int i = 0; i < rank; ++i) {
        if (i == axis) {
            if (keepdim) out_shape.push_back(1);
        } else {
            out_shape.push_back(s[i]);
        }
    }
    if (out_shape.empty()) out_shape.push_back(1);
    std::vector<T> out(outer * inner, T(0));
    const T* src = a.values().data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t k = 0; k < n; ++k) {
            const T* row = src + (o * n + k) * inner;
            T* dst = out.data() + o * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += row[i];
        }
    auto an = a.node();
    return make_op<T>("reduce_sum", out_shape, std::move(out), {a},
                      [an, outer, inner, n](Node<T>& self) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          T* ga = an->grad.data();
                          const T* g = self.grad.data();
                          for (int64_t o = 0; o < outer; ++o)
                              for (int64_t k = 0; k < n; ++k) {
                                  T* gd = ga + (o * n + k) * inner;
                                  const T* gs = g + o * inner;
                                  for (int64_t i = 0; i < inner; ++i) gd[i] += gs[i];
                              }
                      });
}

// ---------------------------------------------------------------------------
// Softmax family (max-subtracted for stability)
// ---------------------------------------------------------------------------

namespace detail {
struct AxisLines {
    int64_t outer, n, inner;
};
inline AxisLines axis_lines(const Shape& s, int axis, const char* op) {
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeMismatch(std::string(op) + ": axis out of range for " + shape_str(s));
    AxisLines l{1, s[axis], 1};
    for (int i = 0; i < axis; ++i) l.outer *= s[i];
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) l.inner *= s[i];
    return l;
}
} // namespace detail

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
    auto l = detail::axis_lines(a.shape(), axis, "softmax");
    std::vector<T> out(a.size());
    const T* src = a.values().data();
    for (int64_t o = 0; o < l.outer; ++o)
        for (int64_t i = 0; i < l.inner; ++i) {
            const int64_t base = o * l.n * l.inner + i;
            T mx = src[base];
            for (int64_t k = 1; k < l.n; ++k) mx = std::max(mx, src[base + k * l.inner]);
            T denom = T(0);
            for (int64_t k = 0; k < l.n; ++k) {
                T e = std::exp(src[base + k * l.inner] - mx);
                out[base + k * l.inner] = e;
                denom += e;
            }
            for (int64_t k = 0; k < l.n; ++k) out[base + k * l.inner] /= denom;
        }
    auto an = a.node();
    return make_op<T>("softmax", a.shape(), std::move(out), {a}, [an, l](Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const T* y = self.value.data();
        const T* g = self.grad.data();
        T* ga = an->grad.data();
        for (int64_t o = 0; o < l.outer; ++o)
            for (int64_t i = 0; i < l.inner; ++i) {
                const int64_t base = o * l.n * l.inner + i;
                T dot = T(0);
                for (int64_t k = 0; k < l.n; ++k)
                    dot += g[base + k * l.inner] * y[base + k * l.inner];
                for (int64_t k = 0; k < l.n; ++k) {
                    const int64_t p = base + k * l.inner;
                    ga[p] += y[p] * (g[p] - dot);
                }
            }
    });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a, int axis) {
    auto l = detail::axis_lines(a.shape(), axis, "log_softmax");
    std::vector<T> out(a.size());
    const T* src = a.values().data();
    for (int64_t o = 0; o < l.outer; ++o)
        for (int64_t i = 0; i < l.inner; ++i) {
            const int64_t base = o * l.n * l.inner + i;
            T mx = src[base];
            for (int64_t k = 1; k < l.n; ++k) mx = std::max(mx, src[base + k * l.inner]);
            T denom = T(0);
            for (int64_t k = 0; k < l.n; ++k) denom += std::exp(src[base + k * l.inner] - mx);
            const T lse = mx + std::log(denom);
            for (int64_t k = 0; k < l.n; ++k)
                out[base + k * l.inner] = src[base + k * l.inner] - lse;
        }
    auto an = a.node();
    return make_op<T>("log_softmax", a.shape(), std::move(out), {a}, [an, l](Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const T* y = self.value.data();
        const T* g = self.grad.data();
        T* ga = an->grad.data();
        for (int64_t o = 0; o < l.outer; ++o)
            for (int64_t i = 0; i < l.inner; ++i) {
                const int64_t base = o * l.n * l.inner + i;
                T gsum = T(0);
                for (int64_t k = 0; k < l.n; ++k) gsum += g[base + k * l.inner];
                for (int64_t k = 0; k < l.n; ++k) {
                    const int64_t p = base + k * l.inner;
                    ga[p] += g[p] - std::exp(y[p]) * gsum;
                }
            }
    });
}

// ---------------------------------------------------------------------------
// Matmul (2-D)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeMismatch("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
            const T av = pa[i * k + kk];
            const T* brow = pb + kk * n;
            T* crow = out.data() + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    auto an = a.node();
    auto bn = b.node();
    return make_op<T>("matmul", Shape{m, n}, std::move(out), {a, b},
                      [an, bn, m, k, n](Node<T>& self) {
                          const T* g = self.grad.data();
                          if (an->requires_grad) {
                              an->ensure_grad();
                              T* ga = an->grad.data();
                              const T* pb = bn->value.data();
                              for (int64_t i = 0; i < m; ++i)
                                  for (int64_t kk = 0; kk < k; ++kk) {
                                      T acc = T(0);
                                      const T* grow = g + i * n;
                                      const T* brow = pb + kk * n;
                                      for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                                      ga[i * k + kk] += acc;
                                  }
                          }
                          if (bn->requires_grad) {
                              bn->ensure_grad();
                              T* gb = bn->grad.data();
                              const T* pa = an->value.data();
                              for (int64_t kk = 0; kk < k; ++kk)
                                  for (int64_t i = 0; i < m; ++i) {
                                      const T av = pa[i * k + kk];
                                      const T* grow = g + i * n;
                                      T* brow = gb + kk * n;
                                      for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                                  }
                          }
                      });
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
    const Shape& s = x.shape();
    const int64_t n = s.back();
    if (gain.size() != n || bias.size() != n)
        throw ShapeMismatch("layer_norm: gain/bias must match last axis");
    const int64_t lines = x.size() / n;
    std::vector<T> out(x.size());
    const T* px = x.values().data();
    const T* pg = gain.values().data();
    const T* pb = bias.values().data();
    std::vector<T> inv_std(lines), mean(lines);
    for (int64_t l = 0; l < lines; ++l) {
        const T* row = px + l * n;
        T mu = T(0);
        for (int64_t i = 0; i < n; ++i) mu += row[i];
        mu /= static_cast<T>(n);
        T var = T(0);
        for (int64_t i = 0; i < n; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= static_cast<T>(n);
        const T is = T(1) / std::sqrt(var + eps);
        mean[l] = mu;
        inv_std[l] = is;
        T* orow = out.data() + l * n;
        for (int64_t i = 0; i < n; ++i) orow[i] = (row[i] - mu) * is * pg[i] + pb[i];
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    return make_op<T>("layer_norm", s, std::move(out), {x, gain, bias},
                      [xn, gn, bn, lines, n, mean, inv_std](Node<T>& self) {
                          const T* g = self.grad.data();
                          const T* px = xn->value.data();
                          const T* pg = gn->value.data();
                          if (gn->requires_grad) gn->ensure_grad();
                          if (bn->requires_grad) bn->ensure_grad();
                          if (xn->requires_grad) xn->ensure_grad();
                          for (int64_t l = 0; l < lines; ++l) {
                              const T* row = px + l * n;
                              const T* grow = g + l * n;
                              const T mu = mean[l], is = inv_std[l];
                              if (gn->requires_grad || bn->requires_grad) {
                                  for (int64_t i = 0; i < n; ++i) {
                                      const T xhat = (row[i] - mu) * is;
                                      if (gn->requires_grad) gn->grad[i] += grow[i] * xhat;
                                      if (bn->requires_grad) bn->grad[i] += grow[i];
                                  }
                              }
                              if (xn->requires_grad) {
                                  T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                                  for (int64_t i = 0; i < n; ++i) {
                                      const T xhat = (row[i] - mu) * is;
                                      const T dxhat = grow[i] * pg[i];
                                      sum_dxhat += dxhat;
                                      sum_dxhat_xhat += dxhat * xhat;
                                  }
                                  T* gx = xn->grad.data() + l * n;
                                  const T inv_n = T(1) / static_cast<T>(n);
                                  for (int64_t i = 0; i < n; ++i) {
                                      const T xhat = (row[i] - mu) * is;
                                      const T dxhat = grow[i] * pg[i];
                                      gx[i] += is * (dxhat - inv_n * sum_dxhat -
                                                     xhat * inv_n * sum_dxhat_xhat);
                                  }
                              }
                          }
                      });
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

/// Populates grad = d(loss)/d(leaf) for every requires_grad leaf reachable
/// from `loss`. Nodes run in reverse creation order, so accumulation order is
/// deterministic.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) throw NonScalarLoss("backward: loss must be scalar");
    auto root = loss.node();
    if (!root->requires_grad) return; // nothing on the tape
    std::vector<std::shared_ptr<Node<T>>> nodes;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::shared_ptr<Node<T>>> stack{root};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (auto& p : n->parents)
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const auto& a, const auto& b) { return a->seq > b->seq; });
    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto& n : nodes) {
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

} // namespace ssc
