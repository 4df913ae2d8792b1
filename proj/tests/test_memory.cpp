#include <catch2/catch_amalgamated.hpp>

#include "afc/log.hpp"
#include "afc/memory.hpp"
#include "afc/trainer.hpp"
#include "testutil.hpp"

using namespace afc;
using Catch::Approx;

namespace {

// independent re-implementation of the greedy rule, O(n^2 d) with explicit
// candidate means recomputed from scratch at every step
std::vector<std::size_t> brute_force_herd(const std::vector<std::vector<double>>& emb,
                                          std::size_t m) {
    const std::size_t n = emb.size(), d = emb[0].size();
    std::vector<double> mu(d, 0.0);
    for (const auto& e : emb)
        for (std::size_t j = 0; j < d; ++j) mu[j] += e[j];
    for (double& v : mu) v /= static_cast<double>(n);
    std::vector<std::size_t> chosen;
    std::vector<bool> used(n, false);
    while (chosen.size() < std::min(m, n)) {
        double best = 1e300;
        std::size_t best_i = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            std::vector<double> mean(d, 0.0);
            for (std::size_t c : chosen)
                for (std::size_t j = 0; j < d; ++j) mean[j] += emb[c][j];
            for (std::size_t j = 0; j < d; ++j)
                mean[j] = (mean[j] + emb[i][j]) / static_cast<double>(chosen.size() + 1);
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j) dist += (mu[j] - mean[j]) * (mu[j] - mean[j]);
            if (dist < best) {
                best = dist;
                best_i = i;
            }
        }
        used[best_i] = true;
        chosen.push_back(best_i);
    }
    return chosen;
}

}  // namespace

TEST_CASE("herding picks the documented scalar sequence") {
    // values {1, 2, 9}: first pick 2 (closest to mean 4), then 9 (pair mean 5.5)
    const std::vector<std::vector<double>> emb{{1.0}, {2.0}, {9.0}};
    const auto order = herd_select(emb, 2);
    REQUIRE(order == std::vector<std::size_t>{1, 2});
}

TEST_CASE("identical embeddings tie-break by lowest index") {
    const std::vector<std::vector<double>> emb(5, std::vector<double>{0.3, 0.7});
    CHECK(herd_select(emb, 3) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("budget >= population keeps everything, with a warning beyond") {
    const std::vector<std::vector<double>> emb{{1.0}, {5.0}, {3.0}};
    const auto full = herd_select(emb, 3);
    CHECK(full.size() == 3);
    int warnings = 0;
    log::set_warn_sink([&](const std::string&) { ++warnings; });
    const auto over = herd_select(emb, 10);
    log::set_warn_sink([](const std::string&) {});
    CHECK(warnings == 1);
    CHECK(over == full);
}

TEST_CASE("herding equals the brute-force oracle on small populations") {
    Rng rng(90);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(9);  // population <= 10
        const std::size_t d = 1 + rng.below(4);
        std::vector<std::vector<double>> emb(n, std::vector<double>(d));
        for (auto& e : emb)
            for (double& v : e) v = rng.normal();
        const std::size_t m = 1 + rng.below(n);
        REQUIRE(herd_select(emb, m) == brute_force_herd(emb, m));
    }
}

TEST_CASE("herding prefixes are stable across budgets") {
    Rng rng(91);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 3 + rng.below(8);
        std::vector<std::vector<double>> emb(n, std::vector<double>(3));
        for (auto& e : emb)
            for (double& v : e) v = rng.normal();
        const auto full = herd_select(emb, n);
        for (std::size_t m = 1; m < n; ++m) {
            const auto part = herd_select(emb, m);
            REQUIRE(std::equal(part.begin(), part.end(), full.begin()));
        }
    }
}

TEST_CASE("nearest-mean classification with tie handling") {
    ExemplarStore store;
    store.class_means[1] = {1.0, 0.0};
    store.class_means[2] = {0.0, 1.0};
    std::vector<double> h{0.9, 0.1};
    const double n = std::sqrt(0.81 + 0.01);
    h[0] /= n;
    h[1] /= n;
    CHECK(classify_nme(h, store) == 1);
    CHECK(classify_nme({0.0, 1.0}, store) == 2);  // exact match
    const double r = 1.0 / std::sqrt(2.0);
    CHECK(classify_nme({r, r}, store) == 1);  // equidistant: lowest id
    CHECK_THROWS_AS(classify_nme(h, ExemplarStore{}), std::invalid_argument);
}

TEST_CASE("argmax inference with tie handling") {
    const std::vector<double> a{0.1, 0.9};
    CHECK(classify_cnn(a.data(), 2) == 1);
    const std::vector<double> ties{0.4, 0.4, 0.4};
    CHECK(classify_cnn(ties.data(), 3) == 0);
    const std::vector<double> single{0.2};
    CHECK(classify_cnn(single.data(), 1) == 0);
}

TEST_CASE("classification rules ignore positive rescaling") {
    ExemplarStore store;
    store.class_means[0] = {0.6, 0.8};
    store.class_means[1] = {-0.8, 0.6};
    std::vector<double> h{0.7, 0.714};
    const int base = classify_nme(h, store);
    CHECK(base == 0);
    std::vector<double> scores{0.2, 0.5, 0.3};
    std::vector<double> scaled{0.4, 1.0, 0.6};
    CHECK(classify_cnn(scores.data(), 3) == classify_cnn(scaled.data(), 3));
}

namespace {

struct StoreFixture {
    Model model;
    Dataset train;
    StagePlan plan;

    static StoreFixture make(int classes, int per_class, int stages) {
        StoreFixture f;
        SyntheticSpec spec;
        spec.num_classes = classes;
        spec.per_class_train = per_class;
        spec.per_class_test = 2;
        spec.image_size = 8;
        spec.seed = 5;
        f.train = make_synthetic(spec).train;
        ModelConfig cfg;
        cfg.in_channels = 1;
        cfg.image_size = 8;
        cfg.channels = {4, 6};
        cfg.proxies_per_class = 2;
        Rng rng(6);
        f.model = Model::init(cfg, classes, rng);
        f.plan = build_stage_plan(classes, stages, 0, stages > 1);
        return f;
    }
};

}  // namespace

TEST_CASE("per-class budget stores budget x classes examples") {
    StoreFixture f = StoreFixture::make(4, 30, 1);
    ExemplarStore store;
    store.mode = BudgetMode::per_class;
    store.budget = 20;
    rebuild_store(store, f.model, f.train, f.plan, 0, 0);
    CHECK(store.total_stored() == 80);
    for (const auto& [cls, idx] : store.per_class) CHECK(idx.size() == 20);
    CHECK(store.class_means.size() == 4);
    for (const auto& [cls, mu] : store.class_means) {
        double n = 0.0;
        for (double v : mu) n += v * v;
        CHECK(std::sqrt(n) == Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("total budget divides evenly across seen classes") {
    StoreFixture f = StoreFixture::make(4, 30, 1);
    ExemplarStore store;
    store.mode = BudgetMode::total;
    store.budget = 50;  // floor(50 / 4) = 12 per class, remainder dropped
    rebuild_store(store, f.model, f.train, f.plan, 0, 0);
    for (const auto& [cls, idx] : store.per_class) CHECK(idx.size() == 12);
}

TEST_CASE("growing the class count truncates old lists to a herding prefix") {
    StoreFixture f = StoreFixture::make(4, 30, 2);  // stages of 2 + 2 classes
    ExemplarStore store;
    store.mode = BudgetMode::total;
    store.budget = 40;
    rebuild_store(store, f.model, f.train, f.plan, 0, 0);  // 2 classes -> 20 each
    std::map<int, std::vector<std::size_t>> before = store.per_class;
    for (const auto& [cls, idx] : before) CHECK(idx.size() == 20);

    rebuild_store(store, f.model, f.train, f.plan, 1, 0);  // 4 classes -> 10 each
    for (const auto& [cls, idx] : store.per_class) {
        CHECK(idx.size() == 10);
        if (before.count(cls))
            CHECK(std::equal(idx.begin(), idx.end(), before[cls].begin()));  // prefix kept
    }
    CHECK(store.per_class.size() == 4);
}

TEST_CASE("random selection is available and seeded") {
    StoreFixture f = StoreFixture::make(4, 10, 1);
    ExemplarStore a, b;
    a.mode = b.mode = BudgetMode::per_class;
    a.budget = b.budget = 4;
    a.rule = b.rule = SelectionRule::random;
    rebuild_store(a, f.model, f.train, f.plan, 0, 123);
    rebuild_store(b, f.model, f.train, f.plan, 0, 123);
    CHECK(a.per_class == b.per_class);
    ExemplarStore c;
    c.mode = BudgetMode::per_class;
    c.budget = 4;
    c.rule = SelectionRule::random;
    rebuild_store(c, f.model, f.train, f.plan, 0, 124);
    CHECK(c.per_class != a.per_class);
}

TEST_CASE("zero budget is rejected") {
    StoreFixture f = StoreFixture::make(4, 10, 1);
    ExemplarStore store;
    store.budget = 0;
    CHECK_THROWS_AS(rebuild_store(store, f.model, f.train, f.plan, 0, 0), config_error);
    ExemplarStore tight;
    tight.mode = BudgetMode::total;
    tight.budget = 3;  // floor(3/4) = 0 per class
    CHECK_THROWS_AS(rebuild_store(tight, f.model, f.train, f.plan, 0, 0), config_error);
}
