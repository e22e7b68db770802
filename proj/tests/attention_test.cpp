#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "anncache/attention.hpp"
#include "anncache/errors.hpp"
#include "oracles.hpp"

using anncache::GroupedKV;
using anncache::Matrix;

namespace {

// Expands a grouped workload back into raw rows: every group contributes
// `mult` copies of one key and per-copy values whose mean is known.
struct DuplicateWorkload {
    Matrix keys;
    Matrix values;
    GroupedKV grouped;
};

DuplicateWorkload planted_duplicates(std::size_t groups, std::size_t d, std::size_t d_v,
                                     std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::uniform_int_distribution<std::size_t> mult_dist(1, 6);

    DuplicateWorkload w{Matrix(0, d), Matrix(0, d_v),
                        GroupedKV{Matrix(groups, d), Matrix(groups, d_v), {}}};
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t m = mult_dist(rng);
        Matrix key(1, d);
        for (std::size_t c = 0; c < d; ++c) key.at(0, c) = dist(rng);
        std::vector<double> mean(d_v, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            Matrix value(1, d_v);
            for (std::size_t c = 0; c < d_v; ++c) {
                value.at(0, c) = dist(rng);
                mean[c] += value.at(0, c);
            }
            w.keys.append_rows(key);
            w.values.append_rows(value);
        }
        for (std::size_t c = 0; c < d; ++c) w.grouped.rep_keys.at(g, c) = key.at(0, c);
        for (std::size_t c = 0; c < d_v; ++c) {
            w.grouped.mean_values.at(g, c) = static_cast<float>(mean[c] / m);
        }
        w.grouped.multiplicities.push_back(m);
    }
    return w;
}

}  // namespace

TEST_CASE("dense_attention matches an independent reference") {
    Matrix q = oracle::random_matrix(6, 16, 1);
    Matrix k = oracle::random_matrix(20, 16, 2);
    Matrix v = oracle::random_matrix(20, 8, 3);
    auto got = anncache::dense_attention(q, k, v, true);
    Matrix want = oracle::attention_reference(q, k, v);
    CHECK(oracle::max_abs_delta(got.output, want) < 1e-6);

    REQUIRE(got.weights.has_value());
    for (std::size_t i = 0; i < q.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < k.rows(); ++j) {
            CHECK(got.weights->at(i, j) >= 0.0f);
            sum += got.weights->at(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("single key context returns the value row exactly") {
    Matrix q = oracle::random_matrix(4, 8, 10);
    Matrix k = oracle::random_matrix(1, 8, 11);
    Matrix v = oracle::random_matrix(1, 5, 12);
    auto out = anncache::dense_attention(q, k, v);
    for (std::size_t i = 0; i < q.rows(); ++i) {
        for (std::size_t c = 0; c < v.cols(); ++c) {
            CHECK(out.output.at(i, c) == v.at(0, c));
        }
    }
}

TEST_CASE("identical keys average the values") {
    Matrix q = oracle::random_matrix(3, 8, 20);
    Matrix k(4, 8);
    Matrix one_key = oracle::random_matrix(1, 8, 21);
    for (std::size_t j = 0; j < 4; ++j) {
        for (std::size_t c = 0; c < 8; ++c) k.at(j, c) = one_key.at(0, c);
    }
    Matrix v = oracle::random_matrix(4, 6, 22);
    auto out = anncache::dense_attention(q, k, v);
    for (std::size_t i = 0; i < q.rows(); ++i) {
        for (std::size_t c = 0; c < v.cols(); ++c) {
            double mean = 0.0;
            for (std::size_t j = 0; j < 4; ++j) mean += v.at(j, c);
            mean /= 4.0;
            CHECK(std::abs(out.output.at(i, c) - mean) < 1e-6);
        }
    }
}

TEST_CASE("attention shape errors") {
    Matrix q(2, 8), k(3, 8), v(3, 4);
    CHECK_THROWS_AS(anncache::dense_attention(Matrix(2, 7), k, v), anncache::ShapeError);
    CHECK_THROWS_AS(anncache::dense_attention(q, k, Matrix(2, 4)), anncache::ShapeError);
    CHECK_THROWS_AS(anncache::dense_attention(q, Matrix(0, 8), Matrix(0, 4)),
                    anncache::ShapeError);
    Matrix bad_q = q;
    bad_q.at(0, 0) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(anncache::dense_attention(bad_q, k, v), anncache::NumericError);
}

TEST_CASE("grouped attention with multiplicity bias reproduces dense over duplicates") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
        auto w = planted_duplicates(12, 16, 8, seed);
        Matrix q = oracle::random_matrix(5, 16, 100 + seed);
        auto dense = anncache::dense_attention(q, w.keys, w.values);
        auto grouped = anncache::grouped_attention(q, w.grouped);
        CHECK(oracle::max_abs_delta(dense.output, grouped.output) <= 1e-6);
    }
}

TEST_CASE("grouped attention bias matches a reference with explicit ln(m) logit shifts") {
    auto w = planted_duplicates(8, 12, 6, 77);
    Matrix q = oracle::random_matrix(4, 12, 78);
    std::vector<double> bias;
    for (std::size_t m : w.grouped.multiplicities) {
        bias.push_back(std::log(static_cast<double>(m)));
    }
    Matrix want = oracle::attention_reference(q, w.grouped.rep_keys, w.grouped.mean_values,
                                              bias);
    auto got = anncache::grouped_attention(q, w.grouped);
    CHECK(oracle::max_abs_delta(got.output, want) < 1e-6);

    // ln(2) and ln(3) are the biases actually applied for m = 2, 3.
    CHECK(std::abs(std::log(2.0) - oracle::kLn2) < 1e-15);
    CHECK(std::abs(std::log(3.0) - oracle::kLn3) < 1e-15);
}

TEST_CASE("all-singleton grouping degenerates to dense attention bitwise") {
    Matrix k = oracle::random_matrix(9, 8, 30);
    Matrix v = oracle::random_matrix(9, 4, 31);
    Matrix q = oracle::random_matrix(3, 8, 32);
    GroupedKV g{k, v, std::vector<std::size_t>(9, 1)};
    auto dense = anncache::dense_attention(q, k, v);
    auto grouped = anncache::grouped_attention(q, g);
    CHECK(oracle::max_abs_delta(dense.output, grouped.output) == 0.0);
}

TEST_CASE("disabling the multiplicity bias breaks duplicate exactness") {
    auto w = planted_duplicates(10, 12, 6, 55);
    Matrix q = oracle::random_matrix(4, 12, 56);
    auto dense = anncache::dense_attention(q, w.keys, w.values);
    auto biased = anncache::grouped_attention(q, w.grouped, false, true);
    auto unbiased = anncache::grouped_attention(q, w.grouped, false, false);
    CHECK(oracle::max_abs_delta(dense.output, biased.output) <= 1e-6);
    CHECK(oracle::max_abs_delta(dense.output, unbiased.output) > 1e-3);
}

TEST_CASE("group_duplicates on exact duplicates") {
    auto w = planted_duplicates(7, 10, 5, 90);
    auto g = anncache::group_duplicates(w.keys, w.values, 1.0);
    REQUIRE(g.groups() == 7);
    CHECK(g.total_members() == w.keys.rows());
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(g.multiplicities[i] == w.grouped.multiplicities[i]);
        for (std::size_t c = 0; c < 5; ++c) {
            CHECK(std::abs(g.mean_values.at(i, c) - w.grouped.mean_values.at(i, c)) < 1e-6);
        }
    }
}

TEST_CASE("group_duplicates keeps near-orthogonal keys apart") {
    // Orthogonal one-hot keys cannot reach cosine 0.99 pairwise.
    const std::size_t n = 12;
    Matrix k(n, n);
    for (std::size_t i = 0; i < n; ++i) k.at(i, i) = 1.0f;
    Matrix v = oracle::random_matrix(n, 4, 91);
    auto g = anncache::group_duplicates(k, v, 0.99);
    CHECK(g.groups() == n);
    for (std::size_t m : g.multiplicities) CHECK(m == 1);
}

TEST_CASE("group_duplicates partitions planted noisy tracks") {
    // 5 tracks x 10 noisy copies; cross-track cosine is far below 0.95 and
    // intra-track cosine far above, so the partition is forced. Verified
    // against brute-force pairwise similarities before asserting.
    const std::size_t tracks = 5, copies = 10, d = 32;
    std::mt19937_64 rng(92);
    std::normal_distribution<float> dist(0.0f, 1.0f);

    Matrix bases(tracks, d);
    for (std::size_t t = 0; t < tracks; ++t) bases.at(t, 2 * t) = 1.0f;  // orthogonal

    Matrix keys(tracks * copies, d);
    Matrix values(tracks * copies, 4);
    std::vector<std::size_t> want_track;
    for (std::size_t i = 0; i < tracks * copies; ++i) {
        const std::size_t t = i % tracks;  // interleaved arrival order
        want_track.push_back(t);
        double norm = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            keys.at(i, c) = bases.at(t, c) + 0.01f * dist(rng);
            norm += static_cast<double>(keys.at(i, c)) * keys.at(i, c);
        }
        norm = std::sqrt(norm);
        for (std::size_t c = 0; c < d; ++c) {
            keys.at(i, c) = static_cast<float>(keys.at(i, c) / norm);
        }
        for (std::size_t c = 0; c < 4; ++c) values.at(i, c) = dist(rng);
    }

    // Brute-force check that the workload is as planted.
    for (std::size_t i = 0; i < keys.rows(); ++i) {
        for (std::size_t j = i + 1; j < keys.rows(); ++j) {
            const double cos = anncache::cosine_f64(keys.row(i), keys.row(j));
            if (want_track[i] == want_track[j]) {
                REQUIRE(cos >= 0.98);
            } else {
                REQUIRE(cos <= 0.5);
            }
        }
    }

    auto g = anncache::group_duplicates(keys, values, 0.95);
    REQUIRE(g.groups() == tracks);
    for (std::size_t m : g.multiplicities) CHECK(m == copies);
    // Greedy first-fit in row order: group t was opened by track t.
    for (std::size_t t = 0; t < tracks; ++t) {
        CHECK(anncache::cosine_f64(g.rep_keys.row(t), bases.row(t)) >= 0.98);
    }
}

TEST_CASE("representative is the last member and ties go to the first group") {
    // Two identical keys then a third equal to them: one group, rep = last.
    Matrix k(3, 2, {1.0f, 0.0f, 1.0f, 0.0f, 1.0f, 0.0f});
    Matrix v(3, 1, {1.0f, 2.0f, 6.0f});
    auto g = anncache::group_duplicates(k, v, 1.0);
    REQUIRE(g.groups() == 1);
    CHECK(g.multiplicities[0] == 3);
    CHECK(g.mean_values.at(0, 0) == doctest::Approx(3.0));

    // Key 2 sits at cosine 0.707 to both prior groups; first-fit takes group 0.
    Matrix k2(3, 2, {1.0f, 0.0f, 0.0f, 1.0f, 1.0f, 1.0f});
    Matrix v2(3, 1, {1.0f, 2.0f, 3.0f});
    auto g2 = anncache::group_duplicates(k2, v2, 0.5);
    REQUIRE(g2.groups() == 2);
    CHECK(g2.multiplicities[0] == 2);
    CHECK(g2.multiplicities[1] == 1);
    // Last-member representative: group 0 now shows key 2's coordinates.
    CHECK(g2.rep_keys.at(0, 0) == 1.0f);
    CHECK(g2.rep_keys.at(0, 1) == 1.0f);
}

TEST_CASE("zero-norm keys become flagged singletons") {
    Matrix k(3, 2, {0.0f, 0.0f, 1.0f, 0.0f, 0.0f, 0.0f});
    Matrix v(3, 1, {1.0f, 2.0f, 3.0f});
    anncache::GroupingStats stats;
    auto g = anncache::group_duplicates(k, v, 0.5, &stats);
    CHECK(g.groups() == 3);
    CHECK(stats.zero_norm_singletons == 2);
    CHECK(stats.token_group == std::vector<std::uint32_t>{0, 1, 2});
}

TEST_CASE("grouping reports which group each row joined") {
    Matrix k(5, 2, {1.0f, 0.0f, 0.0f, 1.0f, 1.0f, 0.0f, 1.0f, 0.0f, 0.0f, 1.0f});
    Matrix v(5, 1, 0.0f);
    anncache::GroupingStats stats;
    auto g = anncache::group_duplicates(k, v, 1.0, &stats);
    REQUIRE(g.groups() == 2);
    CHECK(stats.token_group == std::vector<std::uint32_t>{0, 1, 0, 0, 1});
    CHECK(g.multiplicities[0] == 3);
    CHECK(g.multiplicities[1] == 2);
}

TEST_CASE("grouping error-vs-dense grows as tol drops on a fixed noisy workload") {
    // One drifting-track workload, grouped at successively looser tolerances;
    // the dense oracle is over the raw rows.
    const std::size_t n = 60, d = 24;
    std::mt19937_64 rng(93);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    Matrix keys(n, d), values(n, 6);
    std::vector<float> dir(d, 0.0f);
    dir[0] = 1.0f;
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            dir[c] += 0.06f * dist(rng);  // random walk spreads the keys out
            norm += static_cast<double>(dir[c]) * dir[c];
        }
        norm = std::sqrt(norm);
        for (std::size_t c = 0; c < d; ++c) {
            dir[c] = static_cast<float>(dir[c] / norm);
            keys.at(i, c) = dir[c];
        }
        for (std::size_t c = 0; c < 6; ++c) values.at(i, c) = dist(rng);
    }
    Matrix q = oracle::random_matrix(8, d, 94, 3.0f);
    auto dense = anncache::dense_attention(q, keys, values);

    double prev_err = -1.0;
    for (double tol : {1.0, 0.95, 0.9, 0.7, 0.5}) {
        auto g = anncache::group_duplicates(keys, values, tol);
        auto approx = anncache::grouped_attention(q, g);
        const double err = oracle::max_abs_delta(dense.output, approx.output);
        CHECK(err >= prev_err - 1e-9);
        prev_err = err;
    }
}

TEST_CASE("group_duplicates input validation") {
    Matrix k(2, 3), v(3, 2);
    CHECK_THROWS_AS(anncache::group_duplicates(k, v, 0.9), anncache::ShapeError);
    Matrix v2(2, 2);
    CHECK_THROWS_AS(anncache::group_duplicates(k, v2, 1.5), anncache::ConfigError);
    CHECK_THROWS_AS(anncache::group_duplicates(k, v2, -0.1), anncache::ConfigError);
}

TEST_CASE("GroupedKV validation") {
    GroupedKV g{Matrix(2, 3), Matrix(2, 2), {1, 0}};
    CHECK_THROWS_AS(g.validate(), anncache::InvariantError);
    GroupedKV g2{Matrix(2, 3), Matrix(1, 2), {1, 1}};
    CHECK_THROWS_AS(g2.validate(), anncache::InvariantError);
}
