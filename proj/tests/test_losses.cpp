#include <catch2/catch_amalgamated.hpp>

#include "afc/bounds.hpp"
#include "afc/losses.hpp"
#include "testutil.hpp"

using namespace afc;
using Catch::Approx;

TEST_CASE("lambda_t follows the square-root schedule") {
    CHECK(lambda_t(60, 50) == Approx(std::sqrt(6.0)).epsilon(1e-15));
    CHECK(lambda_t(50, 0) == 1.0);
    CHECK(lambda_t(51, 50) == Approx(std::sqrt(51.0)).epsilon(1e-15));
    CHECK_THROWS_AS(lambda_t(50, 50), std::invalid_argument);
    CHECK_THROWS_AS(lambda_t(49, 50), std::invalid_argument);
}

namespace {

double cls_loss(const Tensor& scores, const std::vector<int>& labels, double eta, double delta,
                bool include_true = false) {
    Tape t;
    Var s = t.constant(scores);
    Var e = t.constant(Tensor::scalar(eta));
    return t.value(classification_loss(t, s, labels, e, delta, Reduction::mean, include_true)).data[0];
}

// independent scalar evaluation of the margin loss
double cls_reference(const std::vector<double>& y, int g, double eta, double delta) {
    double denom = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (static_cast<int>(i) != g) denom += std::exp(eta * y[i]);
    const double v = -(eta * (y[static_cast<std::size_t>(g)] - delta) - std::log(denom));
    return v > 0.0 ? v : 0.0;
}

}  // namespace

TEST_CASE("classification loss: two-class single-term denominator") {
    const Tensor scores = Tensor::matrix({{0.0, 1.0}});
    CHECK(cls_loss(scores, {0}, 1.0, 0.0) == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("classification loss clamps at zero when the margin is large") {
    const Tensor scores = Tensor::matrix({{0.9, 0.3, 0.1}});
    CHECK(cls_loss(scores, {0}, 2.0, 0.1) == 0.0);
    CHECK(cls_reference({0.9, 0.3, 0.1}, 0, 2.0, 0.1) == 0.0);
}

TEST_CASE("classification loss matches the scalar reference when positive") {
    const std::vector<double> row{0.2, 0.6, 0.5};
    const double expected = cls_reference(row, 0, 2.0, 0.1);
    REQUIRE(expected > 0.0);
    CHECK(expected == Approx(std::log(std::exp(1.2) + std::exp(1.0)) - 0.2).epsilon(1e-12));
    CHECK(cls_loss(Tensor::matrix({{0.2, 0.6, 0.5}}), {0}, 2.0, 0.1) ==
          Approx(expected).epsilon(1e-12));
}

TEST_CASE("classification loss averages over the batch") {
    const Tensor scores = Tensor::matrix({{0.2, 0.6, 0.5}, {0.9, 0.3, 0.1}});
    const double expected =
        0.5 * (cls_reference({0.2, 0.6, 0.5}, 0, 2.0, 0.1) + cls_reference({0.9, 0.3, 0.1}, 0, 2.0, 0.1));
    CHECK(cls_loss(scores, {0, 0}, 2.0, 0.1) == Approx(expected).epsilon(1e-12));
}

TEST_CASE("denominator flag restores the conventional softmax denominator") {
    const std::vector<double> row{0.2, 0.6, 0.5};
    const double excl = cls_loss(Tensor::matrix({{0.2, 0.6, 0.5}}), {0}, 2.0, 0.1, false);
    const double incl = cls_loss(Tensor::matrix({{0.2, 0.6, 0.5}}), {0}, 2.0, 0.1, true);
    double denom_incl = 0.0;
    for (double v : row) denom_incl += std::exp(2.0 * v);
    CHECK(incl == Approx(std::log(denom_incl) - 0.2).epsilon(1e-12));
    CHECK(incl > excl);  // extra positive term in the denominator
}

TEST_CASE("classification loss is permutation-equivariant in non-true classes") {
    const double a = cls_loss(Tensor::matrix({{0.2, 0.6, 0.5, -0.1}}), {0}, 1.5, 0.2);
    const double b = cls_loss(Tensor::matrix({{0.2, -0.1, 0.5, 0.6}}), {0}, 1.5, 0.2);
    CHECK(a == Approx(b).epsilon(1e-14));
}

TEST_CASE("classification loss validates inputs") {
    Tape t;
    Var e = t.constant(Tensor::scalar(1.0));
    Var s = t.constant(Tensor::matrix({{0.1, 0.2}}));
    CHECK_THROWS_AS(classification_loss(t, s, {}, e, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(classification_loss(t, s, {2}, e, 0.0), std::invalid_argument);
}

TEST_CASE("normalize_map scales to unit Frobenius norm") {
    const Tensor z = Tensor::matrix({{3, 0}, {0, 4}});
    const Tensor n = normalize_map(z, 1e-8);
    CHECK(n.data[0] == Approx(0.6).epsilon(1e-8));
    CHECK(n.data[3] == Approx(0.8).epsilon(1e-8));
    CHECK(frobenius_norm(n) == Approx(1.0).epsilon(1e-7));

    const Tensor zero({2, 2});
    CHECK(normalize_map(zero, 1e-8).data == std::vector<double>{0, 0, 0, 0});

    Tensor scaled = z;
    for (double& v : scaled.data) v *= 10.0;
    const Tensor n10 = normalize_map(scaled, 1e-8);
    for (std::size_t i = 0; i < 4; ++i) CHECK(n10.data[i] == Approx(n.data[i]).margin(1e-8));
}

namespace {

double disc_value(const Tensor& student, const Tensor& teacher,
                  const std::vector<std::vector<double>>& imp) {
    Tape t;
    Var s = t.leaf(student, true);
    return t.value(discrepancy_loss(t, {s}, {teacher}, imp)).data[0];
}

}  // namespace

TEST_CASE("discrepancy loss is zero for identical taps") {
    Rng rng(40);
    const Tensor z = testutil::random_tensor({2, 3, 4, 4}, rng);
    CHECK(disc_value(z, z, {{1.0, 1.0, 1.0}}) == 0.0);
}

TEST_CASE("discrepancy loss evaluates the frozen example") {
    // student map has unit Frobenius norm, so it survives normalization as
    // 0.5 per cell; the zero teacher map stays zero; difference 0.5 on 2x2
    const Tensor student({1, 1, 2, 2}, {0.5, 0.5, 0.5, 0.5});
    const Tensor teacher({1, 1, 2, 2});
    CHECK(disc_value(student, teacher, {{1.0}}) == Approx(1.0).epsilon(1e-6));  // 4 * 0.25
}

TEST_CASE("discrepancy loss is linear in the importance weights") {
    Rng rng(41);
    const Tensor s = testutil::random_tensor({2, 2, 3, 3}, rng);
    const Tensor t = testutil::random_tensor({2, 2, 3, 3}, rng);
    const double base = disc_value(s, t, {{1.0, 1.0}});
    const double bumped = disc_value(s, t, {{2.0, 1.0}});
    const double ch0 = disc_value(s, t, {{1.0, 0.0}});
    CHECK(bumped == Approx(base + ch0).epsilon(1e-12));
}

TEST_CASE("discrepancy loss is invariant to positive rescaling of raw maps") {
    Rng rng(42);
    const Tensor s = testutil::random_tensor({1, 2, 3, 3}, rng);
    const Tensor t = testutil::random_tensor({1, 2, 3, 3}, rng);
    Tensor s9 = s, t9 = t;
    for (double& v : s9.data) v *= 9.0;
    for (double& v : t9.data) v *= 4.0;  // per-map normalization removes any positive scale
    CHECK(disc_value(s9, t9, {{1.0, 1.0}}) ==
          Approx(disc_value(s, t, {{1.0, 1.0}})).margin(1e-7));
}

TEST_CASE("discrepancy loss rejects malformed inputs") {
    Rng rng(43);
    const Tensor s = testutil::random_tensor({1, 2, 3, 3}, rng);
    const Tensor other = testutil::random_tensor({1, 2, 4, 4}, rng);
    Tape t;
    Var sv = t.leaf(s, true);
    CHECK_THROWS_AS(discrepancy_loss(t, {sv}, {other}, {{1.0, 1.0}}), dimension_error);
    CHECK_THROWS_AS(discrepancy_loss(t, {sv}, {s}, {{1.0}}), dimension_error);
    CHECK_THROWS_AS(discrepancy_loss(t, {sv}, {s}, {{1.0, -0.5}}), std::invalid_argument);
}

TEST_CASE("total_loss composes the exact weighted sum") {
    const LossReport r = total_loss(1.0, 0.5, 4.0, 2.0);
    CHECK(r.total == 5.0);
    CHECK(r.total == r.cls + (4.0 * r.lambda_t) * r.disc);

    const LossReport stage0 = total_loss(0.8, 0.0, 4.0, 1.0);
    CHECK(stage0.total == stage0.cls);

    const LossReport ablated = total_loss(0.8, 123.0, 0.0, 3.0);
    CHECK(ablated.total == ablated.cls);
}

TEST_CASE("gradients of the combined loss match finite differences") {
    const GradCheckReport rep = check_gradients(2, 777);
    INFO("max rel error " << rep.max_rel_error << " over " << rep.params_checked << " params");
    CHECK(rep.violations == 0);
}
