#include <catch2/catch_amalgamated.hpp>

#include "afc/ops.hpp"
#include "testutil.hpp"

using namespace afc;
using Catch::Approx;

TEST_CASE("conv2d with a 1x1 identity kernel is the identity") {
    Rng rng(5);
    Tensor x = testutil::random_tensor({2, 3, 4, 4}, rng);
    Tensor w({3, 3, 1, 1});
    for (std::size_t c = 0; c < 3; ++c) w.data[c * 3 + c] = 1.0;  // w[c][c][0][0] = 1
    Tape t;
    Var y = ops::conv2d(t.constant(x), t.constant(w), 1, 0);
    CHECK(t.value(y).data == x.data);
}

TEST_CASE("relu clamps negatives") {
    Tape t;
    Var y = ops::relu(t.constant(Tensor({2}, {-1.0, 2.0})));
    CHECK(t.value(y).data == std::vector<double>{0.0, 2.0});
}

TEST_CASE("softmax of equal logits is uniform") {
    Tape t;
    Var y = ops::softmax(t.constant(Tensor({1, 5}, std::vector<double>(5, 0.7))));
    for (double v : t.value(y).data) CHECK(v == Approx(0.2).epsilon(1e-12));
}

TEST_CASE("avg_pool averages non-overlapping windows") {
    Tensor x({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tape t;
    Var y = ops::avg_pool(t.constant(x), 2, 2);
    CHECK(t.value(y).shape == Shape{1, 1, 1, 2});
    CHECK(t.value(y).data == std::vector<double>{3.5, 5.5});
}

TEST_CASE("matmul matches a naive triple loop") {
    Rng rng(9);
    const Tensor a = testutil::random_tensor({3, 4}, rng);
    const Tensor b = testutil::random_tensor({4, 5}, rng);
    Tape t;
    const Tensor y = t.value(ops::matmul(t.constant(a), t.constant(b)));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 4; ++k) acc += a.at2(i, k) * b.at2(k, j);
            CHECK(y.at2(i, j) == Approx(acc).margin(1e-12));
        }
}

TEST_CASE("broadcasting add/mul follow trailing-dimension alignment") {
    Tape t;
    Var a = t.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    Var b = t.constant(Tensor({3}, {10, 20, 30}));
    CHECK(t.value(ops::add(a, b)).data == std::vector<double>{11, 22, 33, 14, 25, 36});
    Var c = t.constant(Tensor({2, 1}, {2, 3}));
    CHECK(t.value(ops::mul(a, c)).data == std::vector<double>{2, 4, 6, 12, 15, 18});
    Var bad = t.constant(Tensor({4}, {1, 2, 3, 4}));
    CHECK_THROWS_AS(ops::add(a, bad), dimension_error);
}

TEST_CASE("broadcast backward reduces over expanded dimensions") {
    // FD check through a broadcast multiply + reduction
    Rng rng(21);
    const Tensor a = testutil::random_tensor({2, 3}, rng);
    const Tensor b = testutil::random_tensor({3}, rng);
    auto loss_at = [&](const Tensor& bv) {
        Tape t;
        return t.value(ops::sum(ops::mul(ops::mul(t.constant(a), t.constant(bv)),
                                         t.constant(a)))).data[0];
    };
    Tape t;
    Var bv = t.leaf(b, true);
    Var loss = ops::sum(ops::mul(ops::mul(t.constant(a), bv), t.constant(a)));
    t.backward(loss);
    const Tensor fd = testutil::finite_difference(loss_at, b);
    CHECK(testutil::max_rel_error(t.grad(bv), fd) < 1e-6);
}

TEST_CASE("reductions honor axes and keepdims") {
    Tape t;
    Var a = t.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    CHECK(t.value(ops::reduce_sum(a, {0}, false)).data == std::vector<double>{5, 7, 9});
    CHECK(t.value(ops::reduce_sum(a, {1}, true)).shape == Shape{2, 1});
    CHECK(t.value(ops::reduce_mean(a, {1}, false)).data == std::vector<double>{2, 5});
    CHECK(t.value(ops::sum(a)).data == std::vector<double>{21});
}

TEST_CASE("reshape and flatten preserve data, transpose2d swaps") {
    Tape t;
    Var a = t.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    CHECK(t.value(ops::reshape(a, {3, 2})).data == std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(ops::reshape(a, {4, 2}), dimension_error);
    Var b = t.constant(Tensor({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
    CHECK(t.value(ops::flatten(b)).shape == Shape{2, 4});
    CHECK(t.value(ops::transpose2d(a)).data == std::vector<double>{1, 4, 2, 5, 3, 6});
}

TEST_CASE("softplus is smooth and positive, with sigmoid slope") {
    Tape t;
    Var x = t.leaf(Tensor({3}, {-50.0, 0.0, 50.0}), true);
    Var y = ops::softplus(x);
    const Tensor& yv = t.value(y);
    CHECK(yv.data[0] == Approx(0.0).margin(1e-20));
    CHECK(yv.data[1] == Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(yv.data[2] == Approx(50.0).epsilon(1e-12));
    t.backward(ops::sum(y));
    const Tensor g = t.grad(x);
    CHECK(g.data[1] == Approx(0.5).epsilon(1e-12));
}

namespace {

// random composite graphs built from the primitive menu, checked against
// central finite differences on every leaf element
double composite_loss(int variant, const Tensor& p, const Tensor& x) {
    Tape t;
    Var pv = t.constant(p);
    Var xv = t.constant(x);
    Var out{};
    switch (variant) {
        case 0: out = ops::sum(ops::softmax(ops::matmul(xv, pv))); break;
        case 1: out = ops::sum(ops::log(ops::add_scalar(ops::exp(ops::mul(xv, pv)), 1.0))); break;
        case 2: {
            Var c = ops::conv2d(ops::reshape(xv, {1, 1, 4, 4}), ops::reshape(pv, {2, 1, 3, 3}), 1, 1);
            out = ops::sum(ops::mul(c, c));
            break;
        }
        case 3: {
            Var pooled = ops::avg_pool(ops::relu(ops::reshape(ops::mul(xv, pv), {1, 1, 4, 4})), 2, 2);
            out = ops::sum(ops::sqrt(ops::add_scalar(pooled, 2.0)));
            break;
        }
        default: {
            Var z = ops::div(xv, ops::add_scalar(ops::mul(pv, pv), 1.0));
            out = ops::scale(ops::sum(ops::mul(z, ops::sub(z, pv))), 0.5);
            break;
        }
    }
    return t.value(out).data[0];
}

Tensor composite_grad(int variant, const Tensor& p, const Tensor& x) {
    Tape t;
    Var pv = t.leaf(p, true);
    Var xv = t.constant(x);
    Var out{};
    switch (variant) {
        case 0: out = ops::sum(ops::softmax(ops::matmul(xv, pv))); break;
        case 1: out = ops::sum(ops::log(ops::add_scalar(ops::exp(ops::mul(xv, pv)), 1.0))); break;
        case 2: {
            Var c = ops::conv2d(ops::reshape(xv, {1, 1, 4, 4}), ops::reshape(pv, {2, 1, 3, 3}), 1, 1);
            out = ops::sum(ops::mul(c, c));
            break;
        }
        case 3: {
            Var pooled = ops::avg_pool(ops::relu(ops::reshape(ops::mul(xv, pv), {1, 1, 4, 4})), 2, 2);
            out = ops::sum(ops::sqrt(ops::add_scalar(pooled, 2.0)));
            break;
        }
        default: {
            Var z = ops::div(xv, ops::add_scalar(ops::mul(pv, pv), 1.0));
            out = ops::scale(ops::sum(ops::mul(z, ops::sub(z, pv))), 0.5);
            break;
        }
    }
    t.backward(out);
    return t.grad(pv);
}

}  // namespace

TEST_CASE("every primitive composition matches finite differences") {
    Rng rng(31);
    for (int variant = 0; variant < 5; ++variant) {
        Shape pshape, xshape;
        switch (variant) {
            case 0: pshape = {4, 3}; xshape = {2, 4}; break;
            case 1: pshape = {2, 5}; xshape = {2, 5}; break;
            case 2: pshape = {2, 1, 3, 3}; xshape = {16}; break;
            case 3: pshape = {16}; xshape = {16}; break;
            default: pshape = {3, 4}; xshape = {3, 4}; break;
        }
        for (int rep = 0; rep < 3; ++rep) {
            const Tensor p = testutil::random_tensor(pshape, rng, 0.7);
            const Tensor x = testutil::random_tensor(xshape, rng, 0.7);
            const Tensor analytic = composite_grad(variant, p, x);
            const Tensor fd = testutil::finite_difference(
                [&](const Tensor& pv) { return composite_loss(variant, pv, x); }, p);
            INFO("variant " << variant << " rep " << rep);
            CHECK(testutil::max_rel_error(analytic, fd) < 1e-4);
        }
    }
}
