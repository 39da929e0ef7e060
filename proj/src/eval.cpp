#include "uma2/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <thread>

#include "uma2/common.hpp"

namespace uma2 {

std::vector<std::uint32_t> topk(const Vec& user_vec, const EmbeddingTable& items, std::size_t k,
                                const std::vector<std::uint32_t>& exclusions_sorted) {
  std::vector<std::pair<double, std::uint32_t>> scored;
  scored.reserve(items.vectors.size());
  for (std::uint32_t id = 0; id < items.vectors.size(); ++id) {
    if (!items.present[id]) continue;
    if (std::binary_search(exclusions_sorted.begin(), exclusions_sorted.end(), id)) continue;
    scored.emplace_back(dot(user_vec, items.vectors[id]), id);
  }
  if (k > scored.size()) {
    throw ShapeError("topk: k=" + std::to_string(k) + " exceeds " +
                     std::to_string(scored.size()) + " available items");
  }
  const auto better = [](const std::pair<double, std::uint32_t>& a,
                         const std::pair<double, std::uint32_t>& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  const auto mid = scored.begin() + static_cast<std::ptrdiff_t>(k);
  if (k < scored.size()) std::nth_element(scored.begin(), mid, scored.end(), better);
  std::sort(scored.begin(), mid, better);
  std::vector<std::uint32_t> out;
  out.reserve(k);
  for (std::size_t r = 0; r < k; ++r) out.push_back(scored[r].second);
  return out;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("UMA2_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

std::vector<RetrievalMetrics> evaluate(const EmbeddingTable& users,
                                       const std::vector<std::vector<std::uint32_t>>& test_positives,
                                       const EmbeddingTable& items,
                                       const std::vector<std::size_t>& k_list,
                                       const std::vector<std::vector<std::uint32_t>>* exclusions) {
  static const std::vector<std::uint32_t> kNoExclusions;

  std::vector<std::uint32_t> eligible;
  std::size_t skipped = 0;
  for (std::uint32_t u = 0; u < test_positives.size(); ++u) {
    if (test_positives[u].empty()) continue;  // absent users are not "skipped", just absent
    if (u >= users.present.size() || !users.present[u]) {
      ++skipped;
      continue;
    }
    eligible.push_back(u);
  }

  const std::size_t max_k = *std::max_element(k_list.begin(), k_list.end());

  // hits[user index in eligible][k index]; written by the workers, reduced
  // serially afterwards so the fold order never depends on the thread count.
  std::vector<std::vector<std::size_t>> hits(eligible.size(),
                                             std::vector<std::size_t>(k_list.size(), 0));

  auto eval_user = [&](std::size_t slot) {
    const std::uint32_t u = eligible[slot];
    const std::vector<std::uint32_t>& excl =
        (exclusions && u < exclusions->size()) ? (*exclusions)[u] : kNoExclusions;
    const std::vector<std::uint32_t> top = topk(users.vectors[u], items, max_k, excl);
    const std::vector<std::uint32_t>& pos = test_positives[u];
    std::size_t running = 0;
    for (std::size_t r = 0; r < top.size(); ++r) {
      if (std::binary_search(pos.begin(), pos.end(), top[r])) ++running;
      for (std::size_t ki = 0; ki < k_list.size(); ++ki) {
        if (r + 1 == k_list[ki]) hits[slot][ki] = running;
      }
    }
  };

  const std::size_t threads = std::min(worker_threads(), std::max<std::size_t>(eligible.size(), 1));
  if (threads <= 1) {
    for (std::size_t slot = 0; slot < eligible.size(); ++slot) eval_user(slot);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t slot = t; slot < eligible.size(); slot += threads) eval_user(slot);
      });
    }
    for (std::thread& th : pool) th.join();
  }

  std::vector<RetrievalMetrics> out;
  out.reserve(k_list.size());
  for (std::size_t ki = 0; ki < k_list.size(); ++ki) {
    RetrievalMetrics m;
    m.k = k_list[ki];
    m.users_evaluated = eligible.size();
    m.users_skipped = skipped;
    double hit_users = 0.0, precision_sum = 0.0, recall_sum = 0.0;
    for (std::size_t slot = 0; slot < eligible.size(); ++slot) {
      const std::size_t h = hits[slot][ki];
      if (h >= 1) hit_users += 1.0;
      precision_sum += static_cast<double>(h) / static_cast<double>(m.k);
      recall_sum += static_cast<double>(h) /
                    static_cast<double>(test_positives[eligible[slot]].size());
    }
    if (!eligible.empty()) {
      const double n = static_cast<double>(eligible.size());
      m.hitrate = hit_users / n;
      m.precision = precision_sum / n;
      m.recall = recall_sum / n;
    }
    out.push_back(m);
  }
  return out;
}

std::string metrics_table(const std::vector<RetrievalMetrics>& metrics) {
  std::string out = "     K   HitRate  Precision    Recall   Users\n";
  char buf[128];
  for (const RetrievalMetrics& m : metrics) {
    std::snprintf(buf, sizeof(buf), "%6zu   %7.5f    %7.5f   %7.5f  %6zu\n", m.k, m.hitrate,
                  m.precision, m.recall, m.users_evaluated);
    out += buf;
  }
  return out;
}

}  // namespace uma2
