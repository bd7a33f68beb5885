// SPDX-License-Identifier: Apache-2.0
#include "gltr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gltr/error.hpp"
#include "gltr/log.hpp"
#include "gltr/parallel.hpp"

namespace gltr {

namespace {

std::vector<double> squared_distances(const EmbeddingRecord& query, std::span<const EmbeddingRecord> gallery) {
    require(!gallery.empty(), ErrorCode::InvalidArgument, "gallery is empty");
    std::vector<double> out(gallery.size());
    for (std::size_t g = 0; g < gallery.size(); ++g) {
        require(gallery[g].vector.size() == query.vector.size(), ErrorCode::DimensionMismatch,
                "gallery item " + std::to_string(g) + " has dimension " +
                    std::to_string(gallery[g].vector.size()) + ", query has " +
                    std::to_string(query.vector.size()));
        double acc = 0.0;
        for (std::size_t i = 0; i < query.vector.size(); ++i) {
            const double diff = query.vector[i] - gallery[g].vector[i];
            acc += diff * diff;
        }
        out[g] = acc;
    }
    return out;
}

std::vector<std::size_t> order_by(const std::vector<double>& key) {
    std::vector<std::size_t> order(key.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
    return order;
}

} // namespace

std::vector<double> euclidean_distances(const EmbeddingRecord& query, std::span<const EmbeddingRecord> gallery) {
    std::vector<double> d = squared_distances(query, gallery);
    for (double& v : d) {
        v = std::sqrt(v);
    }
    return d;
}

std::vector<std::size_t> euclidean_rank(const EmbeddingRecord& query, std::span<const EmbeddingRecord> gallery) {
    return order_by(squared_distances(query, gallery));
}

std::vector<double> cmc_curve(std::span<const RankedRelevance> queries, std::size_t max_rank, std::size_t* skipped) {
    require(max_rank >= 1, ErrorCode::InvalidArgument, "max_rank must be >= 1");
    std::size_t longest = 0;
    for (const RankedRelevance& q : queries) {
        longest = std::max(longest, q.size());
    }
    if (longest > 0 && max_rank > longest) {
        warn("CMC rank " + std::to_string(max_rank) + " exceeds the gallery size; clamped to " +
             std::to_string(longest));
        max_rank = longest;
    }
    std::vector<double> hits(max_rank, 0.0);
    std::size_t evaluated = 0;
    std::size_t skip = 0;
    for (const RankedRelevance& q : queries) {
        const auto first = std::find(q.begin(), q.end(), true);
        if (first == q.end()) {
            ++skip;
            continue;
        }
        ++evaluated;
        const auto position = static_cast<std::size_t>(first - q.begin());
        for (std::size_t k = position; k < max_rank; ++k) {
            hits[k] += 1.0;
        }
    }
    if (skipped != nullptr) {
        *skipped = skip;
    }
    if (evaluated > 0) {
        for (double& h : hits) {
            h /= static_cast<double>(evaluated);
        }
    }
    return hits;
}

double average_precision(const RankedRelevance& ranked) {
    double sum = 0.0;
    std::size_t found = 0;
    for (std::size_t p = 0; p < ranked.size(); ++p) {
        if (ranked[p]) {
            ++found;
            sum += static_cast<double>(found) / static_cast<double>(p + 1);
        }
    }
    return found > 0 ? sum / static_cast<double>(found) : 0.0;
}

double mean_ap(std::span<const RankedRelevance> queries, std::size_t* skipped) {
    double sum = 0.0;
    std::size_t evaluated = 0;
    std::size_t skip = 0;
    for (const RankedRelevance& q : queries) {
        if (std::find(q.begin(), q.end(), true) == q.end()) {
            ++skip;
            continue;
        }
        sum += average_precision(q);
        ++evaluated;
    }
    if (skipped != nullptr) {
        *skipped = skip;
    }
    return evaluated > 0 ? sum / static_cast<double>(evaluated) : 0.0;
}

double EvalReport::rank(std::size_t k) const {
    require(k >= 1, ErrorCode::InvalidArgument, "ranks are 1-based");
    if (cmc.empty()) {
        return 0.0;
    }
    return cmc[std::min(k, cmc.size()) - 1];
}

std::vector<RankedRelevance> rank_queries(std::span<const EmbeddingRecord> queries,
                                          std::span<const EmbeddingRecord> gallery, const EvalProtocol& protocol,
                                          std::size_t threads) {
    require(!queries.empty(), ErrorCode::InvalidArgument, "query set is empty");
    require(!gallery.empty(), ErrorCode::InvalidArgument, "gallery is empty");
    const bool same_set = queries.data() == gallery.data() && queries.size() == gallery.size();
    std::vector<RankedRelevance> ranked(queries.size());
    parallel_for(queries.size(), threads, [&](std::size_t qi) {
        const EmbeddingRecord& q = queries[qi];
        const std::vector<std::size_t> order = euclidean_rank(q, gallery);
        RankedRelevance& out = ranked[qi];
        out.reserve(order.size());
        for (std::size_t g : order) {
            const EmbeddingRecord& item = gallery[g];
            if (same_set && g == qi) {
                continue;
            }
            if (protocol.cross_camera_only && item.person_id == q.person_id && item.camera_id == q.camera_id) {
                continue;
            }
            out.push_back(item.person_id == q.person_id);
        }
    });
    return ranked;
}

EvalReport evaluate(std::span<const EmbeddingRecord> queries, std::span<const EmbeddingRecord> gallery,
                    const EvalProtocol& protocol, std::size_t threads) {
    const std::vector<RankedRelevance> ranked = rank_queries(queries, gallery, protocol, threads);
    EvalReport report;
    report.cmc = cmc_curve(ranked, protocol.max_rank, &report.skipped_queries);
    report.map = mean_ap(ranked);
    report.num_queries_evaluated = queries.size() - report.skipped_queries;
    return report;
}

} // namespace gltr
