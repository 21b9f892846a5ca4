#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "ssc/conv.hpp"
#include "ssc/gradcheck.hpp"
#include "ssc/rng.hpp"
#include "ssc/sample.hpp"
#include "ssc/tensor.hpp"

using namespace ssc;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>(std::move(shape), std::move(v));
}

// Scalar probe for vector-valued ops: dot with a fixed random direction.
Tensor<double> probe(const Tensor<double>& y, const Tensor<double>& dir) {
    return sum_all(mul(y, dir));
}

} // namespace

TEST_CASE("elementwise add and mul basics") {
    Tensor<double> a(Shape{2}, {1, 2});
    Tensor<double> b(Shape{2}, {3, 4});
    auto c = add(a, b);
    CHECK(c.values() == std::vector<double>{4, 6});

    Tensor<double> s(Shape{1}, {2});
    Tensor<double> w(Shape{2}, {0.25, 0.75});
    auto m = mul(s, w);
    CHECK(m.values() == std::vector<double>{0.5, 1.5});
}

TEST_CASE("incompatible extents raise ShapeMismatch") {
    Tensor<double> a(Shape{2, 3}, 1.0);
    Tensor<double> b(Shape{4}, 1.0);
    CHECK_THROWS_AS(add(a, b), ShapeMismatch);
    Tensor<double> c(Shape{2, 2}, 1.0);
    CHECK_THROWS_AS(matmul(a, c), ShapeMismatch);
}

TEST_CASE("broadcasting matches explicit tiling exactly") {
    Rng rng(11);
    Tensor<double> a = random_tensor({3, 1, 4}, rng);
    Tensor<double> b = random_tensor({5, 1}, rng);
    Shape full{3, 5, 4};
    auto ta = broadcast_to(a, full);
    auto tb = broadcast_to(b, full);
    auto lazy_add = add(a, b);
    auto tiled_add = add(ta, tb);
    CHECK(lazy_add.shape() == full);
    CHECK(lazy_add.values() == tiled_add.values());
    CHECK(mul(a, b).values() == mul(ta, tb).values());
}

TEST_CASE("softmax contracts") {
    SECTION("uniform logits") {
        Tensor<double> x(Shape{4}, {0, 0, 0, 0});
        auto y = softmax(x, 0);
        for (double v : y.values()) CHECK(v == Catch::Approx(0.25).margin(1e-15));
    }
    SECTION("extreme logits do not overflow") {
        Tensor<double> x(Shape{2}, {1000, 0});
        auto y = softmax(x, 0);
        CHECK(y.values()[0] == Catch::Approx(1.0).margin(1e-12));
        CHECK(y.values()[1] == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("hand-computed values") {
        // e^x / sum(e^x) for x = [1,2,3], evaluated independently.
        Tensor<double> x(Shape{3}, {1, 2, 3});
        auto y = softmax(x, 0);
        CHECK(y.values()[0] == Catch::Approx(0.09003057).margin(1e-8));
        CHECK(y.values()[1] == Catch::Approx(0.24472847).margin(1e-8));
        CHECK(y.values()[2] == Catch::Approx(0.66524096).margin(1e-8));
    }
    SECTION("sums to one along the axis for magnitude-1e3 inputs") {
        Rng rng(7);
        for (int trial = 0; trial < 1000; ++trial) {
            Tensor<double> x = random_tensor({4, 5}, rng, -1e3, 1e3);
            int axis = trial % 2;
            auto y = softmax(x, axis);
            const auto& s = y.shape();
            int64_t lines = s[1 - axis];
            for (int64_t l = 0; l < lines; ++l) {
                double total = 0;
                for (int64_t k = 0; k < s[axis]; ++k)
                    total += axis == 0 ? y.values()[k * s[1] + l] : y.values()[l * s[1] + k];
                CHECK(total == Catch::Approx(1.0).margin(1e-6));
            }
        }
    }
}

TEST_CASE("matmul basics") {
    Tensor<double> eye(Shape{2, 2}, {1, 0, 0, 1});
    Tensor<double> m(Shape{2, 2}, {5, 6, 7, 8});
    CHECK(matmul(eye, m).values() == m.values());

    Tensor<double> a(Shape{1, 2}, {1, 2});
    Tensor<double> b(Shape{2, 1}, {3, 4});
    CHECK(matmul(a, b).values() == std::vector<double>{11});
}

TEST_CASE("conv2d averaging filter keeps constants constant") {
    Tensor<double> in(Shape{5, 5, 1}, 3.0);
    Tensor<double> k(Shape{3, 3, 1, 1}, 1.0 / 9.0);
    auto out = conv2d(in, k, 1, 0);
    REQUIRE(out.shape() == Shape{3, 3, 1});
    for (double v : out.values()) CHECK(v == Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("backward populates leaf gradients") {
    SECTION("sum gradient is all ones") {
        Tensor<double> x(Shape{3}, {5, -2, 7});
        x.set_requires_grad(true);
        backward(sum_all(x));
        CHECK(x.grad() == std::vector<double>{1, 1, 1});
    }
    SECTION("power rule through mul") {
        Tensor<double> x(Shape{2}, {1, 2});
        x.set_requires_grad(true);
        backward(sum_all(mul(x, x)));
        CHECK(x.grad() == std::vector<double>{2, 4});
    }
    SECTION("leaf used along two paths accumulates exactly once per path") {
        Tensor<double> x(Shape{2}, {3, 4});
        x.set_requires_grad(true);
        backward(sum_all(add(mul(x, 2.0), x)));
        CHECK(x.grad() == std::vector<double>{3, 3});
    }
    SECTION("backward over an empty tape is a no-op") {
        Tensor<double> x(Shape{1}, {2});
        CHECK_NOTHROW(backward(x));
    }
    SECTION("non-scalar loss is rejected") {
        Tensor<double> x(Shape{2}, {1, 2});
        x.set_requires_grad(true);
        CHECK_THROWS_AS(backward(mul(x, 2.0)), NonScalarLoss);
    }
}

TEST_CASE("finite differences: analytic anchors") {
    SECTION("sum has unit gradient") {
        Tensor<double> x(Shape{3}, {0.3, -1.2, 2.0});
        auto eval = [&]() { return sum_all(x).item(); };
        auto g = finite_difference_gradient<double>(eval, x, 1e-5);
        for (double v : g) CHECK(v == Catch::Approx(1.0).margin(1e-9));
    }
    SECTION("x squared at 3 gives exactly 6") {
        Tensor<double> x(Shape{1}, {3.0});
        auto eval = [&]() { return x.values()[0] * x.values()[0]; };
        auto g = finite_difference_gradient<double>(eval, x, 1e-5);
        CHECK(g[0] == Catch::Approx(6.0).margin(1e-9));
    }
}

TEST_CASE("gradient checks for core ops") {
    Rng rng(23);
    auto dir2 = random_tensor({2, 3}, rng);
    auto dir_m = random_tensor({2, 2}, rng);

    SECTION("add/sub/mul/div with broadcasting") {
        auto a = random_tensor({2, 3}, rng);
        auto b = random_tensor({3}, rng, 0.5, 1.5);
        for (auto op : {0, 1, 2, 3}) {
            auto fwd = [&]() {
                Tensor<double> y = op == 0   ? add(a, b)
                                   : op == 1 ? sub(a, b)
                                   : op == 2 ? mul(a, b)
                                             : div(a, b);
                return probe(y, dir2);
            };
            auto res = check_gradients<double>("elementwise", fwd, {a, b});
            INFO("op " << op << " err " << res.max_rel_err);
            CHECK(res.pass);
        }
    }
    SECTION("matmul") {
        auto a = random_tensor({2, 4}, rng);
        auto b = random_tensor({4, 2}, rng);
        auto fwd = [&]() { return probe(matmul(a, b), dir_m); };
        CHECK(check_gradients<double>("matmul", fwd, {a, b}).pass);
    }
    SECTION("softmax and log_softmax") {
        auto x = random_tensor({3, 4}, rng, -2, 2);
        auto dir = random_tensor({3, 4}, rng);
        auto f1 = [&]() { return probe(softmax(x, 1), dir); };
        CHECK(check_gradients<double>("softmax", f1, {x}).pass);
        auto f2 = [&]() { return probe(log_softmax(x, 1), dir); };
        CHECK(check_gradients<double>("log_softmax", f2, {x}).pass);
    }
    SECTION("reductions, reshape, concat, slice, gather") {
        auto x = random_tensor({3, 4}, rng);
        auto y = random_tensor({2, 4}, rng);
        auto dir = random_tensor({4}, rng);
        auto f1 = [&]() { return probe(reduce_sum(x, 0), dir); };
        CHECK(check_gradients<double>("reduce_sum", f1, {x}).pass);
        auto dir_cat = random_tensor({5, 4}, rng);
        auto f2 = [&]() { return probe(concat<double>({x, y}, 0), dir_cat); };
        CHECK(check_gradients<double>("concat", f2, {x, y}).pass);
        auto dir_slice = random_tensor({3, 2}, rng);
        auto f3 = [&]() { return probe(slice(x, 1, 1, 2), dir_slice); };
        CHECK(check_gradients<double>("slice", f3, {x}).pass);
        std::vector<int64_t> idx{2, 0, 2};
        auto dir_g = random_tensor({3, 4}, rng);
        auto f4 = [&]() { return probe(gather_rows(x, idx), dir_g); };
        CHECK(check_gradients<double>("gather_rows", f4, {x}).pass);
        auto dir_r = random_tensor({12}, rng);
        auto f5 = [&]() { return probe(reshape(x, {12}), dir_r); };
        CHECK(check_gradients<double>("reshape", f5, {x}).pass);
    }
    SECTION("unary ops") {
        auto x = random_tensor({2, 3}, rng, 0.2, 2.0);
        auto f1 = [&]() { return probe(exp(x), dir2); };
        CHECK(check_gradients<double>("exp", f1, {x}).pass);
        auto f2 = [&]() { return probe(log(x), dir2); };
        CHECK(check_gradients<double>("log", f2, {x}).pass);
        auto y = random_tensor({2, 3}, rng); // mixed signs, away from the kink
        auto f3 = [&]() { return probe(relu(y), dir2); };
        CHECK(check_gradients<double>("relu", f3, {y}).pass);
    }
    SECTION("layer_norm") {
        auto x = random_tensor({3, 4}, rng);
        auto gain = random_tensor({4}, rng, 0.5, 1.5);
        auto bias = random_tensor({4}, rng);
        auto dir = random_tensor({3, 4}, rng);
        auto fwd = [&]() { return probe(layer_norm(x, gain, bias), dir); };
        CHECK(check_gradients<double>("layer_norm", fwd, {x, gain, bias}).pass);
    }
    SECTION("conv2d and conv3d") {
        auto in2 = random_tensor({4, 4, 2}, rng);
        auto k2 = random_tensor({3, 3, 2, 2}, rng);
        auto dir_c2 = random_tensor({4, 4, 2}, rng);
        auto f1 = [&]() { return probe(conv2d(in2, k2, 1, 1), dir_c2); };
        CHECK(check_gradients<double>("conv2d", f1, {in2, k2}).pass);

        auto in3 = random_tensor({3, 3, 2, 2}, rng);
        auto k3 = random_tensor({3, 3, 3, 2, 2}, rng);
        auto dir_c3 = random_tensor({3, 3, 2, 2}, rng);
        auto f2 = [&]() { return probe(conv3d(in3, k3, 1, 1), dir_c3); };
        CHECK(check_gradients<double>("conv3d", f2, {in3, k3}).pass);
    }
    SECTION("softmax cross-entropy composite") {
        auto logits = random_tensor({4, 3}, rng, -1, 1);
        Tensor<double> onehot(Shape{4, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 0});
        auto fwd = [&]() {
            return neg(mean_all(reduce_sum(mul(log_softmax(logits, 1), onehot), 1)));
        };
        auto res = check_gradients<double>("softmax_xent", fwd, {logits}, 1e-5, 1e-6);
        INFO("err " << res.max_rel_err);
        CHECK(res.pass);
    }
}

TEST_CASE("operations are bitwise deterministic") {
    Rng rng(99);
    auto a = random_tensor({6, 7}, rng);
    auto b = random_tensor({7}, rng);
    auto r1 = mul(a, b);
    auto r2 = mul(a, b);
    REQUIRE(r1.size() == r2.size());
    CHECK(std::memcmp(r1.values().data(), r2.values().data(), sizeof(double) * r1.size()) == 0);

    auto k = random_tensor({3, 3, 7, 2}, rng);
    Shape in_shape{5, 5, 7};
    auto in = random_tensor(in_shape, rng);
    auto c1 = conv2d(in, k, 1, 1);
    auto c2 = conv2d(in, k, 1, 1);
    CHECK(std::memcmp(c1.values().data(), c2.values().data(), sizeof(double) * c1.size()) == 0);
}

TEST_CASE("non-finite results are rejected") {
    Tensor<double> x(Shape{1}, {0.0});
    CHECK_THROWS_AS(log(x), NonFiniteValue);
    Tensor<double> a(Shape{1}, {1.0});
    Tensor<double> z(Shape{1}, {0.0});
    CHECK_THROWS_AS(div(a, z), NonFiniteValue);
}

TEST_CASE("trilinear sampling") {
    SECTION("lattice point returns stored value") {
        Rng rng(5);
        auto vol = random_tensor({3, 4, 2, 2}, rng);
        auto out = sample_trilinear_at(vol, 2.0, 1.0, 1.0);
        const auto& v = vol.values();
        int64_t off = ((2 * 4 + 1) * 2 + 1) * 2;
        CHECK(out.values()[0] == v[off]);
        CHECK(out.values()[1] == v[off + 1]);
    }
    SECTION("center of a 2x2x2 cube of 0..7 is 3.5") {
        std::vector<double> v{0, 1, 2, 3, 4, 5, 6, 7};
        Tensor<double> vol(Shape{2, 2, 2, 1}, v);
        auto out = sample_trilinear_at(vol, 0.5, 0.5, 0.5);
        CHECK(out.values()[0] == Catch::Approx(3.5).margin(1e-12));
    }
    SECTION("fully outside gives zero") {
        Tensor<double> vol(Shape{2, 2, 2, 1}, 5.0);
        auto out = sample_trilinear_at(vol, -2.0, 0.5, 0.5);
        CHECK(out.values()[0] == 0.0);
    }
    SECTION("gradient check wrt volume and coords") {
        Rng rng(31);
        auto vol = random_tensor({3, 3, 3, 2}, rng);
        Tensor<double> coords(Shape{4, 3},
                              {0.3, 1.2, 0.7, 1.9, 0.4, 1.1, -0.4, 2.3, 0.2, 2.6, 2.6, 2.6});
        auto dir = random_tensor({4, 2}, rng);
        auto fwd = [&]() { return probe(sample_trilinear(vol, coords), dir); };
        auto res = check_gradients<double>("sample_trilinear", fwd, {vol, coords});
        INFO("err " << res.max_rel_err);
        CHECK(res.pass);
    }
}
