// SPDX-License-Identifier: Apache-2.0
//
// Retrieval metrics: Euclidean ranking, CMC and mean average precision.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gltr {

struct EmbeddingRecord {
    std::uint32_t person_id = 0;
    std::uint32_t camera_id = 0;
    std::vector<double> vector;
};

// Gallery indices by ascending distance; equal distances keep index order.
std::vector<std::size_t> euclidean_rank(const EmbeddingRecord& query,
                                        std::span<const EmbeddingRecord> gallery);
std::vector<double> euclidean_distances(const EmbeddingRecord& query,
                                        std::span<const EmbeddingRecord> gallery);

// One query's ranked gallery after filtering, as relevant / irrelevant flags.
using RankedRelevance = std::vector<bool>;

// cmc[k-1] = fraction of evaluated queries whose first relevant item sits at
// rank <= k. Queries without any relevant item are skipped and counted.
// `max_rank` is clamped (with a warning) to the longest ranked list.
std::vector<double> cmc_curve(std::span<const RankedRelevance> queries, std::size_t max_rank,
                              std::size_t* skipped = nullptr);

// Average precision of one ranked list (0 when nothing is relevant).
double average_precision(const RankedRelevance& ranked);
double mean_ap(std::span<const RankedRelevance> queries, std::size_t* skipped = nullptr);

struct EvalProtocol {
    // Drop gallery items that share both person and camera id with the query.
    bool cross_camera_only = false;
    std::size_t max_rank = 20;
};

struct EvalReport {
    std::vector<double> cmc;
    double map = 0.0;
    std::size_t num_queries_evaluated = 0;
    std::size_t skipped_queries = 0;
    std::string post_processing = "none";

    // cmc at rank k (1-based), extended flat past the end of the curve.
    double rank(std::size_t k) const;
};

// Per-query ranked relevance under the protocol. When `queries` and
// `gallery` are the same span, query i never matches gallery item i.
std::vector<RankedRelevance> rank_queries(std::span<const EmbeddingRecord> queries,
                                          std::span<const EmbeddingRecord> gallery,
                                          const EvalProtocol& protocol, std::size_t threads = 1);

EvalReport evaluate(std::span<const EmbeddingRecord> queries, std::span<const EmbeddingRecord> gallery,
                    const EvalProtocol& protocol = {}, std::size_t threads = 1);

} // namespace gltr
