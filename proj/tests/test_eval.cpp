// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "gltr/error.hpp"
#include "gltr/eval.hpp"
#include "gltr/log.hpp"
#include "oracles.hpp"

using namespace gltr;
using gltr::test::oracle_evaluate;
using gltr::test::OracleReport;

namespace {

std::vector<EmbeddingRecord> random_records(std::size_t n, std::size_t dim, std::size_t ids, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    std::vector<EmbeddingRecord> out(n);
    for (EmbeddingRecord& r : out) {
        r.person_id = static_cast<std::uint32_t>(rng() % ids);
        r.camera_id = static_cast<std::uint32_t>(1 + rng() % 2);
        r.vector.resize(dim);
        for (double& v : r.vector) {
            v = g(rng);
        }
    }
    return out;
}

struct QuietWarnings {
    QuietWarnings() { set_warning_handler([](const std::string&) {}); }
    ~QuietWarnings() { set_warning_handler({}); }
};

} // namespace

TEST_CASE("euclidean rank: exact copy first, tie rule, brute-force sort oracle") {
    const EmbeddingRecord q{1, 1, {0.5, -1.0, 2.0}};
    std::vector<EmbeddingRecord> gallery = {{2, 1, {3.0, 0.0, 0.0}}, {1, 2, {0.5, -1.0, 2.0}}, {3, 1, {0.0, 0.0, 0.0}}};
    const auto order = euclidean_rank(q, gallery);
    CHECK(order.front() == 1);
    CHECK(euclidean_distances(q, gallery)[1] == 0.0);
    CHECK(euclidean_distances(q, gallery)[0] == doctest::Approx(std::sqrt(2.5 * 2.5 + 1.0 + 4.0)));

    const EmbeddingRecord origin{0, 1, {0.0, 0.0}};
    const std::vector<EmbeddingRecord> tied = {{1, 1, {0.0, 1.0}}, {2, 1, {2.0, 0.0}}, {3, 1, {1.0, 0.0}}, {4, 1, {-1.0, 0.0}}};
    CHECK(euclidean_rank(origin, tied) == std::vector<std::size_t>{0, 2, 3, 1});

    std::mt19937_64 rng(1);
    const auto items = random_records(51, 6, 10, rng);
    const std::vector<EmbeddingRecord> g50(items.begin() + 1, items.end());
    std::vector<std::pair<double, std::size_t>> ref;
    for (std::size_t i = 0; i < g50.size(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < 6; ++k) {
            s += std::pow(items[0].vector[k] - g50[i].vector[k], 2);
        }
        ref.emplace_back(std::sqrt(s), i);
    }
    std::sort(ref.begin(), ref.end());
    const auto got = euclidean_rank(items[0], g50);
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i] == ref[i].second);
    }

    CHECK_THROWS_AS(euclidean_rank(q, std::vector<EmbeddingRecord>{}), Error);
    CHECK_THROWS_AS(euclidean_rank(q, std::vector<EmbeddingRecord>{{1, 1, {1.0}}}), Error);
}

TEST_CASE("cmc and AP definitions") {
    const std::vector<RankedRelevance> perfect = {{true, false, false}, {true, true, false}};
    for (double v : cmc_curve(perfect, 3)) {
        CHECK(v == 1.0);
    }
    CHECK(mean_ap(perfect) == 1.0);

    const std::vector<RankedRelevance> third = {{false, false, true, false, false}};
    CHECK(cmc_curve(third, 5) == std::vector<double>{0.0, 0.0, 1.0, 1.0, 1.0});

    CHECK(average_precision({false, true, false}) == 0.5);
    CHECK(average_precision({true, true, false, false}) == 1.0);
    CHECK(average_precision({false, true, false, true}) == doctest::Approx((0.5 + 0.5) / 2.0));

    std::size_t skipped = 0;
    const std::vector<RankedRelevance> with_empty = {{false, false}, {false, true}};
    CHECK(cmc_curve(with_empty, 2, &skipped) == std::vector<double>{0.0, 1.0});
    CHECK(skipped == 1);
    CHECK(mean_ap(with_empty, &skipped) == 0.5);
    CHECK(skipped == 1);
}

TEST_CASE("cmc clamps an oversized max rank with a warning") {
    std::vector<std::string> warnings;
    set_warning_handler([&](const std::string& m) { warnings.push_back(m); });
    const std::vector<RankedRelevance> q = {{false, true, false}};
    const auto cmc = cmc_curve(q, 20);
    set_warning_handler({});
    CHECK(cmc.size() == 3);
    CHECK(warnings.size() == 1);
}

TEST_CASE("evaluate matches the brute-force oracle on 100 random instances") {
    QuietWarnings quiet;
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t nq = 1 + rng() % 10;
        const std::size_t ng = 1 + rng() % 20;
        const std::size_t ids = 1 + rng() % 6;
        const auto queries = random_records(nq, 4, ids, rng);
        const auto gallery = random_records(ng, 4, ids, rng);
        for (bool cross : {false, true}) {
            const EvalProtocol protocol{cross, 20};
            const EvalReport got = evaluate(queries, gallery, protocol, 1 + trial % 3);
            const OracleReport want = oracle_evaluate(queries, gallery, cross, 20, false);
            CHECK(got.cmc == want.cmc);
            CHECK(got.map == want.map);
            CHECK(got.num_queries_evaluated == want.evaluated);
            CHECK(got.skipped_queries == want.skipped);
            for (std::size_t k = 1; k < got.cmc.size(); ++k) {
                CHECK(got.cmc[k - 1] <= got.cmc[k]);
            }
            CHECK(got.map >= 0.0);
            CHECK(got.map <= 1.0);
            if (!got.cmc.empty()) {
                CHECK(got.map <= got.cmc.back());
            }
        }
    }
}

TEST_CASE("same-set evaluation excludes only the query itself") {
    QuietWarnings quiet;
    std::mt19937_64 rng(3);
    const auto items = random_records(12, 3, 4, rng);
    const EvalReport got = evaluate(items, items, {false, 20});
    const OracleReport want = oracle_evaluate(items, items, false, 20, true);
    CHECK(got.cmc == want.cmc);
    CHECK(got.map == want.map);

    // A separate copy is not the same memory, so exact duplicates match first.
    const std::vector<EmbeddingRecord> copy = items;
    const EvalReport dup = evaluate(items, copy, {false, 20});
    CHECK(dup.rank(1) == 1.0);
}

TEST_CASE("distinct identities, gallery equals queries: perfect scores") {
    QuietWarnings quiet;
    std::vector<EmbeddingRecord> q;
    for (std::uint32_t i = 0; i < 6; ++i) {
        q.push_back({i, 1, {static_cast<double>(i), 1.0}});
    }
    std::vector<EmbeddingRecord> g = q;
    for (EmbeddingRecord& r : g) {
        r.camera_id = 2;
    }
    const EvalReport r = evaluate(q, g, {true, 20});
    CHECK(r.rank(1) == 1.0);
    CHECK(r.map == 1.0);
    for (double v : r.cmc) {
        CHECK(v == 1.0);
    }
    CHECK(r.post_processing == "none");
}

TEST_CASE("cross-camera protocol on a single camera evaluates nothing") {
    QuietWarnings quiet;
    std::vector<EmbeddingRecord> q = {{1, 1, {0.0}}, {2, 1, {1.0}}};
    std::vector<EmbeddingRecord> g = {{1, 1, {0.1}}, {2, 1, {0.9}}};
    const EvalReport r = evaluate(q, g, {true, 20});
    CHECK(r.num_queries_evaluated == 0);
    CHECK(r.skipped_queries == 2);
    CHECK(r.map == 0.0);
    CHECK(r.rank(1) == 0.0);
    CHECK_THROWS_AS(evaluate(std::vector<EmbeddingRecord>{}, g), Error);
}

TEST_CASE("rankings are invariant to a common scale and translation") {
    std::mt19937_64 rng(4);
    const auto items = random_records(30, 5, 5, rng);
    std::vector<EmbeddingRecord> moved = items;
    const std::vector<double> shift = {1.0, -2.0, 0.5, 3.0, -1.5};
    for (EmbeddingRecord& r : moved) {
        for (std::size_t k = 0; k < 5; ++k) {
            r.vector[k] = 4.0 * r.vector[k] + shift[k];
        }
    }
    const std::span<const EmbeddingRecord> g(items.data() + 1, 29);
    const std::span<const EmbeddingRecord> gm(moved.data() + 1, 29);
    CHECK(euclidean_rank(items[0], g) == euclidean_rank(moved[0], gm));
}
