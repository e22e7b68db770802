#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <vector>

#include "anncache/attention.hpp"
#include "anncache/errors.hpp"
#include "anncache/metrics.hpp"
#include "oracles.hpp"

using anncache::CandidateSet;
using anncache::Matrix;

namespace {

// Rows of positive weights normalized to sum 1, with one heavy entry so the
// distribution is peaked rather than flat.
Matrix peaked_weights(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.01, 0.2);
    Matrix w(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            double x = u(rng);
            if (j == rng() % cols) x += 2.0;
            w.at(i, j) = static_cast<float>(x);
            sum += x;
        }
        for (std::size_t j = 0; j < cols; ++j) {
            w.at(i, j) = static_cast<float>(w.at(i, j) / sum);
        }
    }
    return w;
}

}  // namespace

TEST_CASE("footprint is a closed-form byte count") {
    CHECK(anncache::cache_footprint_bytes(0, 64, 64) == 0);
    CHECK(anncache::cache_footprint_bytes(10, 16, 16) == 10 * (32 * 4 + 24));
    CHECK(anncache::cache_footprint_bytes(7, 64, 32) == 7 * ((64 + 32) * 4 + 24));
    // one entry costs the two f32 rows plus the fixed overhead
    CHECK(anncache::cache_footprint_bytes(1, 1, 1) ==
          2 * sizeof(float) + anncache::kEntryOverheadBytes);
}

TEST_CASE("recall over a full plan is exactly one") {
    Matrix w = peaked_weights(5, 12, 1);
    CandidateSet all(12);
    std::iota(all.begin(), all.end(), 0u);
    std::vector<CandidateSet> plans(5, all);
    CHECK(anncache::attention_recall(w, plans) == 1.0);
}

TEST_CASE("uniform mass splits evenly across retained keys") {
    Matrix w(3, 4, 0.25f);
    std::vector<CandidateSet> plans(3, CandidateSet{0});
    CHECK(anncache::attention_recall(w, plans) == 0.25);
    plans.assign(3, CandidateSet{1, 3});
    CHECK(anncache::attention_recall(w, plans) == 0.5);
}

TEST_CASE("recall matches a direct summation oracle") {
    std::mt19937_64 rng(2);
    Matrix w = peaked_weights(8, 30, 3);
    std::vector<CandidateSet> plans;
    for (std::size_t i = 0; i < 8; ++i) {
        CandidateSet cand;
        for (std::uint32_t j = 0; j < 30; ++j) {
            if (rng() % 3 == 0) cand.push_back(j);
        }
        if (cand.empty()) cand.push_back(0);
        plans.push_back(std::move(cand));
    }
    double want = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
        double mass = 0.0, kept = 0.0;
        for (std::size_t j = 0; j < 30; ++j) mass += w.at(i, j);
        for (std::uint32_t j : plans[i]) kept += w.at(i, j);
        want += kept / mass;
    }
    want /= 8.0;
    CHECK(anncache::attention_recall(w, plans) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("recall is invariant under a consistent key permutation") {
    Matrix w = peaked_weights(6, 20, 4);
    std::vector<CandidateSet> plans;
    std::mt19937_64 rng(5);
    for (std::size_t i = 0; i < 6; ++i) {
        CandidateSet cand;
        for (std::uint32_t j = 0; j < 20; ++j) {
            if (rng() % 2 == 0) cand.push_back(j);
        }
        if (cand.empty()) cand.push_back(3);
        plans.push_back(std::move(cand));
    }

    std::vector<std::uint32_t> perm(20);
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix wp(6, 20);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j < 20; ++j) wp.at(i, perm[j]) = w.at(i, j);
    }
    std::vector<CandidateSet> plans_p;
    for (const auto& cand : plans) {
        CandidateSet moved;
        for (std::uint32_t j : cand) moved.push_back(perm[j]);
        plans_p.push_back(std::move(moved));
    }
    CHECK(anncache::attention_recall(w, plans) ==
          doctest::Approx(anncache::attention_recall(wp, plans_p)).epsilon(1e-12));
}

TEST_CASE("recall rejects malformed input") {
    Matrix w(2, 4, 0.25f);
    std::vector<CandidateSet> bad_count(1, CandidateSet{0});
    CHECK_THROWS_AS(anncache::attention_recall(w, bad_count), anncache::ShapeError);
    std::vector<CandidateSet> oob(2, CandidateSet{7});
    CHECK_THROWS_AS(anncache::attention_recall(w, oob), anncache::ShapeError);
    Matrix zero(1, 3);
    std::vector<CandidateSet> one(1, CandidateSet{0});
    CHECK_THROWS_AS(anncache::attention_recall(zero, one), anncache::NumericError);
    CHECK_THROWS_AS(anncache::attention_recall(Matrix(0, 3), {}), anncache::ShapeError);
}

TEST_CASE("grouped mass recall compares entry masses") {
    SUBCASE("perfect agreement scores one") {
        Matrix dense(1, 3, {0.2f, 0.3f, 0.5f});
        Matrix grouped(1, 2, {0.2f, 0.8f});
        std::vector<std::uint32_t> map = {0, 1, 1};
        CHECK(anncache::grouped_mass_recall(dense, grouped, map) ==
              doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("mass in the wrong entry is not credited") {
        Matrix dense(1, 3, {0.2f, 0.3f, 0.5f});
        Matrix grouped(1, 2, {0.5f, 0.5f});
        std::vector<std::uint32_t> map = {0, 1, 1};
        // overlap = min(.5,.2) + min(.5,.8) = 0.7
        CHECK(anncache::grouped_mass_recall(dense, grouped, map) ==
              doctest::Approx(0.7).epsilon(1e-6));
    }
    SUBCASE("exact grouping through the attention pipeline scores one") {
        Matrix keys(6, 4), values(6, 3);
        std::vector<std::uint32_t> map = {0, 1, 2, 0, 1, 0};
        Matrix base_k = oracle::random_matrix(3, 4, 6);
        Matrix base_v = oracle::random_matrix(3, 3, 7);
        for (std::size_t t = 0; t < 6; ++t) {
            for (std::size_t c = 0; c < 4; ++c) keys.at(t, c) = base_k.at(map[t], c);
            for (std::size_t c = 0; c < 3; ++c) values.at(t, c) = base_v.at(map[t], c);
        }
        auto grouped = anncache::group_duplicates(keys, values, 1.0);
        REQUIRE(grouped.groups() == 3);
        Matrix q = oracle::random_matrix(4, 4, 8);
        auto dense = anncache::dense_attention(q, keys, values, true);
        auto approx = anncache::grouped_attention(q, grouped, true);
        CHECK(anncache::grouped_mass_recall(*dense.weights, *approx.weights, map) ==
              doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("validation") {
        Matrix dense(1, 3, {0.2f, 0.3f, 0.5f});
        Matrix grouped(1, 2, {0.5f, 0.5f});
        CHECK_THROWS_AS(anncache::grouped_mass_recall(dense, grouped, {0, 1}),
                        anncache::ShapeError);
        CHECK_THROWS_AS(anncache::grouped_mass_recall(dense, grouped, {0, 1, 5}),
                        anncache::ShapeError);
        CHECK_THROWS_AS(anncache::grouped_mass_recall(dense, Matrix(2, 2, 0.5f), {0, 1, 1}),
                        anncache::ShapeError);
    }
}

TEST_CASE("max_abs_diff is the worst elementwise gap") {
    Matrix a(2, 2, {1.0f, 2.0f, 3.0f, 4.0f});
    Matrix b(2, 2, {1.0f, 2.5f, 2.0f, 4.0f});
    CHECK(anncache::max_abs_diff(a, b) == 1.0);
    CHECK(anncache::max_abs_diff(a, a) == 0.0);
    CHECK_THROWS_AS(anncache::max_abs_diff(a, Matrix(2, 3)), anncache::ShapeError);
}

TEST_CASE("retention curve ends at one and honors ties") {
    SUBCASE("full retention is exact") {
        Matrix w = peaked_weights(7, 19, 9);
        const double fs[] = {0.5, 1.0};
        auto curve = anncache::recall_density_curve(w, fs);
        REQUIRE(curve.size() == 2);
        CHECK(curve[1].fraction == 1.0);
        CHECK(curve[1].recall == 1.0);
        CHECK(curve[0].recall <= 1.0);
    }
    SUBCASE("uniform weights retain the kept fraction") {
        Matrix w(2, 10, 0.1f);
        const double fs[] = {0.3};
        auto curve = anncache::recall_density_curve(w, fs);
        CHECK(curve[0].recall == doctest::Approx(0.3).epsilon(1e-6));
    }
    SUBCASE("ties go to the lower index") {
        Matrix w(1, 3, {0.4f, 0.3f, 0.3f});
        const double fs[] = {2.0 / 3.0};
        auto curve = anncache::recall_density_curve(w, fs);
        CHECK(curve[0].recall == doctest::Approx(0.7).epsilon(1e-6));
    }
}

TEST_CASE("retention curve matches a sorting oracle and is monotone") {
    Matrix w = peaked_weights(9, 40, 10);
    std::vector<double> fs = {0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
    auto curve = anncache::recall_density_curve(w, fs);
    REQUIRE(curve.size() == fs.size());

    double prev = 0.0;
    for (std::size_t fi = 0; fi < fs.size(); ++fi) {
        // oracle: sort each row descending (stable on index), prefix mass
        double want = 0.0;
        for (std::size_t i = 0; i < w.rows(); ++i) {
            std::vector<std::size_t> order(40);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return w.at(i, a) > w.at(i, b);
            });
            const auto keep =
                static_cast<std::size_t>(std::ceil(fs[fi] * 40.0));
            double mass = 0.0, kept = 0.0;
            for (std::size_t j = 0; j < 40; ++j) mass += w.at(i, j);
            for (std::size_t j = 0; j < keep; ++j) kept += w.at(i, order[j]);
            want += keep >= 40 ? 1.0 : kept / mass;
        }
        want /= static_cast<double>(w.rows());
        CHECK(curve[fi].recall == doctest::Approx(want).epsilon(1e-9));
        CHECK(curve[fi].recall >= prev - 1e-12);
        prev = curve[fi].recall;
    }
    CHECK(curve.back().recall == 1.0);
}

TEST_CASE("retention curve validates input") {
    Matrix w(1, 3, {0.4f, 0.3f, 0.3f});
    const double zero[] = {0.0};
    CHECK_THROWS_AS(anncache::recall_density_curve(w, zero), anncache::ConfigError);
    const double big[] = {1.1};
    CHECK_THROWS_AS(anncache::recall_density_curve(w, big), anncache::ConfigError);
    const double ok[] = {0.5};
    CHECK_THROWS_AS(anncache::recall_density_curve(Matrix(0, 3), ok), anncache::ShapeError);
}

TEST_CASE("metrics rows serialize to the documented schema") {
    std::ostringstream os;
    anncache::write_metrics_header(os);
    anncache::MetricsRow row;
    row.frame = 3;
    row.method = "dense";
    row.density = 0.5;
    row.recall = 0.25;
    row.max_abs_err = 1e-7;
    row.cache_entries = 42;
    row.cache_bytes = 1520;
    row.attn_micros = 777;
    row.index_micros = 12;
    anncache::write_metrics_row(os, row);
    CHECK(os.str() ==
          "frame,method,density,recall,max_abs_err,cache_entries,cache_bytes,"
          "attn_micros,index_micros\n"
          "3,dense,0.5,0.25,1e-07,42,1520,777,12\n");
}
