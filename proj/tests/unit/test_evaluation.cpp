#include "etcn/evaluation.hpp"
#include "metrics_oracle.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

using namespace etcn;
using namespace etcn::test;

namespace {

ConfusionMatrix matrix_of(int n, std::vector<std::int64_t> counts) { return {n, std::move(counts)}; }

}  // namespace

TEST_CASE("confusion matrix counts label pairs") {
    const std::vector<int> truth{0, 1, 2, 2, 1, 0};
    const auto perfect = confusion_matrix(truth, truth, 3);
    CHECK(perfect.trace() == 6);
    CHECK(perfect.total() == 6);
    const std::vector<int> zeros(6, 0);
    const auto column = confusion_matrix(truth, zeros, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 1; j < 3; ++j) CHECK(column.at(i, j) == 0);

    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> cls(0, 3);
    std::vector<int> t(50), p(50);
    for (int k = 0; k < 50; ++k) {
        t[static_cast<std::size_t>(k)] = cls(rng);
        p[static_cast<std::size_t>(k)] = cls(rng);
    }
    const auto cm = confusion_matrix(t, p, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            std::int64_t n = 0;
            for (int k = 0; k < 50; ++k) n += t[static_cast<std::size_t>(k)] == i && p[static_cast<std::size_t>(k)] == j;
            CHECK(cm.at(i, j) == n);
        }
    const std::vector<int> short_pred{0};
    CHECK_THROWS(confusion_matrix(truth, short_pred, 3));
    const std::vector<int> bad{0, 1, 2, 3, 1, 0};
    CHECK_THROWS(confusion_matrix(truth, bad, 3));
}

TEST_CASE("the two-class worked example") {
    const auto r = compute_metrics(matrix_of(2, {50, 10, 5, 35}));
    CHECK(r.accuracy == 0.85);
    CHECK(r.per_class[0].precision == 50.0 / 55.0);
    CHECK(r.per_class[0].recall == 50.0 / 60.0);
    CHECK(r.per_class[0].f1 == doctest::Approx(0.8695652173913043).epsilon(1e-14));
    CHECK(r.per_class[1].precision == 35.0 / 45.0);
    CHECK(r.per_class[1].recall == 35.0 / 40.0);
    CHECK(r.macro_precision == doctest::Approx((50.0 / 55.0 + 35.0 / 45.0) / 2.0).epsilon(1e-15));
    CHECK(r.per_class[0].support == 60);
}

TEST_CASE("a diagonal matrix scores one everywhere") {
    const auto r = compute_metrics(matrix_of(3, {4, 0, 0, 0, 9, 0, 0, 0, 1}));
    CHECK(r.accuracy == 1.0);
    CHECK(r.macro_precision == 1.0);
    CHECK(r.macro_recall == 1.0);
    CHECK(r.macro_f1 == 1.0);
    CHECK(r.micro_f1 == 1.0);
}

TEST_CASE("an absent, unpredicted class is degenerate and can be excluded") {
    const auto r = compute_metrics(matrix_of(3, {5, 1, 0, 2, 6, 0, 0, 0, 0}));
    CHECK(r.per_class[2].degenerate);
    CHECK(r.per_class[2].f1 == 0.0);
    CHECK_FALSE(r.per_class[0].degenerate);
    CHECK(r.macro_f1 == doctest::Approx((r.per_class[0].f1 + r.per_class[1].f1) / 3.0));
    CHECK(r.macro_f1_excluding_degenerate == doctest::Approx((r.per_class[0].f1 + r.per_class[1].f1) / 2.0));
    CHECK_THROWS(compute_metrics(matrix_of(2, {0, 0, 0, 0})));
}

TEST_CASE("metrics agree with the brute-force oracle on random matrices") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto cm = random_confusion(rng);
        const auto r = compute_metrics(cm);
        const auto o = oracle_metrics(cm);
        REQUIRE(r.accuracy == o.accuracy);
        CHECK(r.accuracy == static_cast<double>(cm.trace()) / static_cast<double>(cm.total()));
        for (int c = 0; c < cm.n_classes; ++c) {
            const auto& m = r.per_class[static_cast<std::size_t>(c)];
            CHECK(std::abs(m.precision - o.precision[static_cast<std::size_t>(c)]) <= 1e-12);
            CHECK(std::abs(m.recall - o.recall[static_cast<std::size_t>(c)]) <= 1e-12);
            CHECK(std::abs(m.f1 - o.f1[static_cast<std::size_t>(c)]) <= 1e-12);
        }
        CHECK(std::abs(r.macro_precision - o.macro_precision) <= 1e-12);
        CHECK(std::abs(r.macro_recall - o.macro_recall) <= 1e-12);
        CHECK(std::abs(r.macro_f1 - o.macro_f1) <= 1e-12);
        // Single-label data: micro averages equal accuracy.
        CHECK(std::abs(r.micro_f1 - r.accuracy) <= 1e-12);

        std::vector<double> f1;
        for (const auto& m : r.per_class) f1.push_back(m.f1);
        CHECK(r.macro_f1 <= *std::max_element(f1.begin(), f1.end()) + 1e-15);
        CHECK(r.macro_f1 >= *std::min_element(f1.begin(), f1.end()) - 1e-15);
        for (double v : {r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1}) CHECK((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("relabeling classes permutes per-class metrics only") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const auto cm = random_confusion(rng);
        std::vector<int> perm(static_cast<std::size_t>(cm.n_classes));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        ConfusionMatrix moved = cm;
        for (int i = 0; i < cm.n_classes; ++i)
            for (int j = 0; j < cm.n_classes; ++j)
                moved.at(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]) = cm.at(i, j);
        const auto a = compute_metrics(cm), b = compute_metrics(moved);
        CHECK(a.accuracy == b.accuracy);
        CHECK(a.macro_f1 == doctest::Approx(b.macro_f1).epsilon(1e-14));
        CHECK(a.macro_precision == doctest::Approx(b.macro_precision).epsilon(1e-14));
        for (int c = 0; c < cm.n_classes; ++c)
            CHECK(a.per_class[static_cast<std::size_t>(c)].f1 ==
                  b.per_class[static_cast<std::size_t>(perm[static_cast<std::size_t>(c)])].f1);
    }
}

TEST_CASE("row normalization") {
    const auto n = row_normalized(matrix_of(2, {3, 1, 0, 0}));
    CHECK(n == std::vector<double>{0.75, 0.25, 0.0, 0.0});
}

TEST_CASE("ablation rows average repeated runs") {
    const VariantResult single{"etcn", {{0.9, 0.8, 0.7, 0.75}}, 5};
    auto rows = ablation_table(std::span<const VariantResult>(&single, 1));
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].mean.accuracy == 0.9);
    CHECK(rows[0].stddev.accuracy == 0.0);

    std::vector<VariantResult> two{{"tcn", {{0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0.5, 0.5}}, 5},
                                   {"tcn+sa", {{0.7, 0.6, 0.5, 0.4}, {0.8, 0.6, 0.4, 0.2}, {0.9, 0.9, 0.9, 0.9}}, 5}};
    rows = ablation_table(two);
    CHECK(rows[0].stddev.f1 == 0.0);
    CHECK(rows[1].variant == "tcn+sa");
    CHECK(rows[1].runs == 3);
    CHECK(rows[1].mean.accuracy == doctest::Approx(0.8));
    CHECK(rows[1].stddev.accuracy == doctest::Approx(0.1));  // sample std of 0.7, 0.8, 0.9
    CHECK(rows[1].mean.f1 == doctest::Approx(0.5));
    CHECK(rows[1].stddev.f1 == doctest::Approx(std::sqrt((0.01 + 0.09 + 0.16) / 2.0)));

    two[1].split_fingerprint = 6;
    CHECK_THROWS(ablation_table(two));
    two[1].split_fingerprint = 5;
    two[1].runs.clear();
    CHECK_THROWS(ablation_table(two));
}

TEST_CASE("report writers") {
    const auto cm = matrix_of(2, {50, 10, 5, 35});
    std::ostringstream c;
    write_confusion_csv(c, cm);
    CHECK(c.str() == "true\\pred,0,1\n0,50,10\n1,5,35\n");
    std::ostringstream nrm;
    write_normalized_confusion_csv(nrm, matrix_of(2, {3, 1, 0, 2}));
    CHECK(nrm.str() == "true\\pred,0,1\n0,0.75,0.25\n1,0,1\n");
    std::ostringstream m;
    write_metrics_csv(m, compute_metrics(cm));
    CHECK(m.str().rfind("accuracy,precision,recall,f1\n0.85,", 0) == 0);
    std::ostringstream a;
    const std::vector<AblationRow> rows{{"etcn", 2, {0.9, 0.8, 0.7, 0.6}, {0.01, 0, 0, 0}}};
    write_ablation_csv(a, rows);
    CHECK(a.str().find("\netcn,2,0.9,0.01,0.8,0,0.7,0,0.6,0\n") != std::string::npos);
}
