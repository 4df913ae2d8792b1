#include <catch2/catch_amalgamated.hpp>

#include "afc/bounds.hpp"
#include "testutil.hpp"

using namespace afc;
using Catch::Approx;

TEST_CASE("Taylor residual vanishes for linear maps") {
    Rng rng(50);
    const Tensor z = testutil::random_tensor({2, 3}, rng);
    const Tensor d = testutil::random_tensor({2, 3}, rng);
    const Tensor w = testutil::random_tensor({3, 4}, rng);
    auto linear = [&](Tape& t, Var zv) { return ops::sum(ops::matmul(zv, t.constant(w))); };
    for (double eps : {1e-1, 1e-3, 1e-6})
        CHECK(taylor_residual(linear, z, d, eps) < 1e-12);
}

TEST_CASE("Taylor residual vanishes for a zero direction") {
    Rng rng(51);
    const Tensor z = testutil::random_tensor({2, 2}, rng);
    const Tensor d({2, 2});
    const SmoothFixture fx = SmoothFixture::random(7);
    Tensor z2(fx.zshape), d2(fx.zshape);
    for (double& v : z2.data) v = rng.normal();
    auto f = [&fx](Tape& t, Var zv) { return fx.graph(t, zv); };
    CHECK(taylor_residual(f, z2, d2, 1e-2) < 1e-14);
}

TEST_CASE("quadratic loss: halving eps quarters the residual") {
    Rng rng(52);
    const Tensor z = testutil::random_tensor({3, 3}, rng);
    Tensor d = testutil::random_tensor({3, 3}, rng);
    const double n = frobenius_norm(d);
    for (double& v : d.data) v /= n;
    auto quad = [](Tape& t, Var zv) { return ops::sum(ops::mul(zv, zv)); };
    const double r1 = taylor_residual(quad, z, d, 1e-3);
    const double r2 = taylor_residual(quad, z, d, 5e-4);
    CHECK(r1 == Approx(1e-6).epsilon(1e-6));  // eps^2 * ||d||^2
    CHECK(r1 / r2 == Approx(4.0).epsilon(1e-6));
}

TEST_CASE("smooth random fixtures scale at second order") {
    const TaylorReport rep = check_taylor(50, 1234);
    INFO("ratio range [" << rep.min_ratio << ", " << rep.max_ratio << "]");
    CHECK(rep.pass_fraction() >= 0.95);
}

TEST_CASE("bound chain: alignment makes the first link tight") {
    Rng rng(53);
    std::vector<Tensor> grads, deltas;
    for (int i = 0; i < 7; ++i) {
        Tensor g = testutil::random_tensor({2, 4}, rng, std::exp(rng.uniform(-1, 1)));
        grads.push_back(g);
        deltas.push_back(g);  // delta == grad
    }
    const CsTrial t = cs_chain_trial(grads, deltas);
    CHECK(t.e_inner == Approx(t.e_normprod).epsilon(1e-12));
    CHECK(t.e_normprod <= t.root_e2 + 1e-12);
}

TEST_CASE("bound chain: orthogonal pairs have zero inner expectation") {
    std::vector<Tensor> grads, deltas;
    for (int i = 0; i < 5; ++i) {
        grads.push_back(Tensor({1, 2}, {1.0 + i, 0.0}));
        deltas.push_back(Tensor({1, 2}, {0.0, 2.0 - 0.1 * i}));
    }
    const CsTrial t = cs_chain_trial(grads, deltas);
    CHECK(t.e_inner == 0.0);
    CHECK(t.e_inner <= t.e_normprod);
    CHECK(t.e_normprod <= t.root_e2 + 1e-12);
}

TEST_CASE("bound chain: constant norms make the second link tight") {
    Rng rng(54);
    std::vector<Tensor> grads, deltas;
    for (int i = 0; i < 6; ++i) {
        Tensor g = testutil::random_tensor({3, 3}, rng);
        Tensor d = testutil::random_tensor({3, 3}, rng);
        const double gn = frobenius_norm(g), dn = frobenius_norm(d);
        for (double& v : g.data) v *= 2.0 / gn;   // ||g|| = 2 for every sample
        for (double& v : d.data) v *= 0.5 / dn;   // ||d|| = 0.5
        grads.push_back(std::move(g));
        deltas.push_back(std::move(d));
    }
    const CsTrial t = cs_chain_trial(grads, deltas);
    CHECK(t.e_normprod == Approx(t.root_e2).epsilon(1e-12));
}

TEST_CASE("bound chain holds over seeded random trials") {
    const BoundTrialReport rep = check_cs_chain(300, 4321);
    INFO("max slack " << rep.max_slack);
    CHECK(rep.violations == 0);
}

TEST_CASE("mixture decomposition: documented arithmetic case") {
    // phi_old = 0.5, E_old = 2, E_new = 4 -> mixture expectation 3 >= 1
    const MixtureTrial t = mixture_trial({1.0}, {2.0}, {1.0}, {4.0}, 0.5);
    CHECK(t.e_mixture == Approx(3.0).epsilon(1e-15));
    CHECK(t.phi_old * t.e_old == Approx(1.0).epsilon(1e-15));
    CHECK(t.phi_old * t.e_old <= t.e_mixture);
}

TEST_CASE("mixture decomposition: boundary weights give equality") {
    const MixtureTrial all_old = mixture_trial({0.25, 0.75}, {1.0, 3.0}, {1.0}, {9.0}, 1.0);
    CHECK(all_old.e_mixture == Approx(all_old.e_old).epsilon(1e-15));  // phi_new = 0

    const MixtureTrial zero_new = mixture_trial({0.5, 0.5}, {2.0, 6.0}, {1.0}, {0.0}, 0.7);
    CHECK(zero_new.phi_old * zero_new.e_old == Approx(zero_new.e_mixture).epsilon(1e-15));
}

TEST_CASE("mixture trials reject negative discrepancies") {
    CHECK_THROWS_AS(mixture_trial({1.0}, {-0.1}, {1.0}, {1.0}, 0.5), std::invalid_argument);
}

TEST_CASE("enumerated mixtures satisfy the identity and the bound") {
    const BoundTrialReport rep = check_proposition1(300, 8642);
    INFO("max deviation " << rep.max_slack);
    CHECK(rep.violations == 0);
}

TEST_CASE("single-pair bound is just Cauchy-Schwarz") {
    Rng rng(55);
    const Tensor g = testutil::random_tensor({3, 3}, rng);
    const Tensor d = testutil::random_tensor({3, 3}, rng);
    const double lhs = frobenius_inner(g, d) * frobenius_inner(g, d);
    const double rhs = frobenius_norm_sq(g) * frobenius_norm_sq(d);
    CHECK(lhs <= rhs + 1e-12);
}

TEST_CASE("importance-weighted objective bounds the squared loss change") {
    const BoundTrialReport rep = check_importance_bound_link(10, 777);
    INFO("max slack " << rep.max_slack << " over " << rep.trials << " channel checks");
    CHECK(rep.violations == 0);
    CHECK(rep.trials > 0);
}
