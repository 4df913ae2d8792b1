#include <catch2/catch_amalgamated.hpp>

#include "afc/metrics.hpp"

using namespace afc;
using Catch::Approx;

TEST_CASE("average incremental accuracy is the mean over stages") {
    CHECK(avg_incremental_accuracy({80, 70, 60}) == 70.0);
    CHECK(avg_incremental_accuracy({55}) == 55.0);
    CHECK(avg_incremental_accuracy({42, 42, 42, 42}) == 42.0);
    CHECK_THROWS_AS(avg_incremental_accuracy({}), std::invalid_argument);
}

TEST_CASE("backward transfer compares final against just-learned accuracy") {
    AccuracyMatrix none;
    none.a = {{90}, {90, 80}, {90, 80, 70}};
    CHECK(backward_transfer(none) == 0.0);

    AccuracyMatrix drop;
    drop.a = {{90}, {80, 85}, {80, 75, 70}};
    CHECK(backward_transfer(drop) == -10.0);

    AccuracyMatrix two;
    two.a = {{90}, {70, 60}};
    CHECK(backward_transfer(two) == -20.0);

    AccuracyMatrix single;
    single.a = {{90}};
    CHECK_THROWS_AS(backward_transfer(single), std::invalid_argument);
}

TEST_CASE("average accuracy is the mean of the final row") {
    AccuracyMatrix m;
    m.a = {{50}, {55, 45}, {60, 70, 80}};
    CHECK(average_accuracy(m) == 70.0);
    AccuracyMatrix single;
    single.a = {{63}};
    CHECK(average_accuracy(single) == 63.0);
    AccuracyMatrix zeros;
    zeros.a = {{0}, {0, 0}};
    CHECK(average_accuracy(zeros) == 0.0);
}

TEST_CASE("BWT is non-positive when nothing improves and ignores unchanged tasks") {
    AccuracyMatrix m;
    m.a = {{88}, {80, 77}, {70, 70, 66}};
    CHECK(backward_transfer(m) <= 0.0);

    AccuracyMatrix base;
    base.a = {{80}, {75, 70}};
    AccuracyMatrix extended = base;
    extended.a.push_back({75, 70, 65});  // final accuracies of old tasks unchanged
    CHECK(backward_transfer(extended) == Approx(0.5 * ((75 - 80) + (70 - 70))));
}

TEST_CASE("avg incremental accuracy is monotone in each entry") {
    const double base = avg_incremental_accuracy({50, 60, 70});
    CHECK(avg_incremental_accuracy({50, 65, 70}) > base);
    CHECK(avg_incremental_accuracy({45, 60, 70}) < base);
}
