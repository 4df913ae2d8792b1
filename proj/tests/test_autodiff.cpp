#include <catch2/catch_amalgamated.hpp>

#include "afc/log.hpp"
#include "afc/ops.hpp"
#include "afc/tape.hpp"
#include "testutil.hpp"

using namespace afc;

TEST_CASE("d/dx sum(x^2) = 2x") {
    Tape t;
    Var x = t.leaf(Tensor({3}, {1, 2, 3}), true);
    Var loss = ops::sum(ops::mul(x, x));
    t.backward(loss);
    const Tensor g = t.grad(x);
    CHECK(g.data == std::vector<double>{2, 4, 6});
}

TEST_CASE("gradient of a linear form is its coefficient matrix") {
    Tape t;
    const Tensor G = Tensor::matrix({{0.5, -1.25}, {2.0, 3.5}});
    Var x = t.leaf(Tensor({2, 2}, {1, 1, 1, 1}), true);
    Var loss = ops::sum(ops::mul(t.constant(G), x));
    t.backward(loss);
    CHECK(t.grad(x).data == G.data);
}

TEST_CASE("two-layer MLP gradients match finite differences") {
    Rng rng(3);
    Tensor x = testutil::random_tensor({2, 5}, rng);
    Tensor w1 = testutil::random_tensor({5, 7}, rng, 0.5);
    Tensor w2 = testutil::random_tensor({7, 3}, rng, 0.5);

    auto loss_at = [&](const Tensor& w1v, const Tensor& w2v) {
        Tape t;
        Var h = ops::relu(ops::matmul(t.constant(x), t.constant(w1v)));
        Var y = ops::matmul(h, t.constant(w2v));
        return t.value(ops::sum(ops::mul(y, y))).data[0];
    };

    Tape t;
    Var w1v = t.leaf(w1, true);
    Var w2v = t.leaf(w2, true);
    Var h = ops::relu(ops::matmul(t.constant(x), w1v));
    Var y = ops::matmul(h, w2v);
    t.backward(ops::sum(ops::mul(y, y)));

    const Tensor fd1 = testutil::finite_difference([&](const Tensor& w) { return loss_at(w, w2); }, w1);
    const Tensor fd2 = testutil::finite_difference([&](const Tensor& w) { return loss_at(w1, w); }, w2);
    CHECK(testutil::max_rel_error(t.grad(w1v), fd1) < 1e-4);
    CHECK(testutil::max_rel_error(t.grad(w2v), fd2) < 1e-4);
}

TEST_CASE("backward is deterministic") {
    auto run = [] {
        Rng rng(17);
        Tape t;
        Var x = t.leaf(testutil::random_tensor({4, 4}, rng), true);
        Var w = t.leaf(testutil::random_tensor({4, 4}, rng), true);
        Var loss = ops::sum(ops::softmax(ops::matmul(ops::relu(x), w)));
        t.backward(loss);
        auto g1 = t.grad(x).data;
        auto g2 = t.grad(w).data;
        g1.insert(g1.end(), g2.begin(), g2.end());
        return g1;
    };
    CHECK(run() == run());
}

TEST_CASE("loss must be scalar") {
    Tape t;
    Var x = t.leaf(Tensor({2}, {1, 2}), true);
    CHECK_THROWS_AS(t.backward(ops::mul(x, x)), std::invalid_argument);
}

TEST_CASE("gradients: unreachable handles get zeros, detached ones warn") {
    Tape t;
    Var x = t.leaf(Tensor({2}, {1, 2}), true);
    Var orphan = t.leaf(Tensor({3}, {1, 2, 3}), true);    // not part of the loss
    Var detached = t.leaf(Tensor({2}, {5, 6}), false);     // requires_grad off
    Var loss = ops::sum(ops::mul(x, x));

    int warnings = 0;
    log::set_warn_sink([&](const std::string&) { ++warnings; });
    const auto grads = t.gradients(loss, {x, orphan, detached});
    log::set_warn_sink([](const std::string&) {});

    CHECK(grads[0].data == std::vector<double>{2, 4});
    CHECK(grads[1].data == std::vector<double>{0, 0, 0});
    CHECK(grads[2].data == std::vector<double>{0, 0});
    CHECK(warnings == 1);
}
