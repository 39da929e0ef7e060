#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uma2/gmm.hpp"

namespace uma2 {

struct RetrievalMetrics {
  std::size_t k = 0;
  double hitrate = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t users_evaluated = 0;
  std::size_t users_skipped = 0;
};

// The `k` items with the largest inner product against `user_vec`, best
// first; equal scores break toward the smaller item id. Excluded and absent
// items never appear. Throws ShapeError when fewer than `k` candidates exist.
std::vector<std::uint32_t> topk(const Vec& user_vec, const EmbeddingTable& items, std::size_t k,
                                const std::vector<std::uint32_t>& exclusions_sorted);

// Per-user macro averages over every user with at least one test positive and
// a present embedding (others are counted in users_skipped):
//   hits_u        = |positives_u  intersect  top-K_u|
//   HitRate@K     = share of users with hits_u >= 1
//   Precision@K   = mean of hits_u / K
//   Recall@K      = mean of hits_u / |positives_u|
// `exclusions` (typically each user's training positives) are removed from
// the candidate set when given. Worker count follows UMA2_THREADS; the
// reduction runs in user-id order, so results do not depend on the thread
// count.
std::vector<RetrievalMetrics> evaluate(const EmbeddingTable& users,
                                       const std::vector<std::vector<std::uint32_t>>& test_positives,
                                       const EmbeddingTable& items,
                                       const std::vector<std::size_t>& k_list,
                                       const std::vector<std::vector<std::uint32_t>>* exclusions);

// Number of worker threads to use: UMA2_THREADS when set to a positive
// integer, otherwise the hardware concurrency (at least 1).
std::size_t worker_threads();

// Fixed-width table, one row per K.
std::string metrics_table(const std::vector<RetrievalMetrics>& metrics);

}  // namespace uma2
