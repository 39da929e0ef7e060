#pragma once

// Shared helpers for the test binaries: finite-difference gradient checks,
// hand-built corpora, scratch directories, and an independent top-K metrics
// reference.

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "uma2/corpus.hpp"
#include "uma2/eval.hpp"
#include "uma2/tensor.hpp"

namespace uma2::testing {

inline double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

// Central finite difference of `loss` with respect to every entry of
// `params`, overwriting and restoring in place.
inline std::vector<double> fd_gradient(Vec& params, const std::function<double()>& loss,
                                       double h = 1e-5) {
  std::vector<double> grad(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss();
    params[i] = saved - h;
    const double down = loss();
    params[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// Worst relative error between an analytic gradient vector and the finite
// difference of `loss` over the same parameters.
inline double max_grad_rel_err(Vec& params, const Vec& analytic,
                               const std::function<double()>& loss, double h = 1e-5) {
  const std::vector<double> fd = fd_gradient(params, loss, h);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    worst = std::max(worst, rel_err(analytic[i], fd[i]));
  }
  return worst;
}

inline Vec random_vec(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Vec v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

// Corpus with explicit per-pair flags, features drawn from `rng`. `pairs`
// holds (user, item, clicked, exposed, recalled).
struct PairSpec {
  std::uint32_t user;
  std::uint32_t item;
  bool clicked;
  bool exposed;
  bool recalled;
};

inline Corpus build_corpus(std::size_t num_users, std::size_t num_items, std::size_t feature_dim,
                           const std::vector<PairSpec>& pairs, std::mt19937_64& rng) {
  Corpus c;
  c.user_features.resize(num_users);
  c.item_features.resize(num_items);
  c.user_seen.assign(num_users, true);
  c.item_seen.assign(num_items, true);
  for (auto& f : c.user_features) f = random_vec(feature_dim, rng, 0.5);
  for (auto& f : c.item_features) f = random_vec(feature_dim, rng, 0.5);
  for (const PairSpec& p : pairs) {
    InteractionRecord r;
    r.user = p.user;
    r.item = p.item;
    r.clicked = p.clicked;
    r.exposed = p.exposed;
    r.recalled = p.recalled;
    r.space = space_label(p.clicked, p.exposed, p.recalled);
    c.interactions.push_back(r);
  }
  c.rebuild_indexes();
  return c;
}

// Scratch directory under the system temp root, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("uma2-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Deliberately naive top-K metrics: full sort per user, no threading, no
// shared code with uma2::evaluate beyond the embedding tables.
inline std::vector<RetrievalMetrics> naive_metrics(
    const EmbeddingTable& users, const std::vector<std::vector<std::uint32_t>>& positives,
    const EmbeddingTable& items, const std::vector<std::size_t>& k_list,
    const std::vector<std::vector<std::uint32_t>>* exclusions) {
  std::vector<RetrievalMetrics> out;
  for (const std::size_t k : k_list) {
    RetrievalMetrics m;
    m.k = k;
    double hit_users = 0.0, precision = 0.0, recall = 0.0;
    for (std::size_t u = 0; u < positives.size(); ++u) {
      if (positives[u].empty()) continue;
      if (u >= users.present.size() || !users.present[u]) {
        ++m.users_skipped;
        continue;
      }
      std::vector<std::pair<double, std::uint32_t>> scored;
      for (std::uint32_t i = 0; i < items.present.size(); ++i) {
        if (!items.present[i]) continue;
        if (exclusions && u < exclusions->size()) {
          const auto& ex = (*exclusions)[u];
          if (std::binary_search(ex.begin(), ex.end(), i)) continue;
        }
        double s = 0.0;
        for (std::size_t d = 0; d < users.dim; ++d) s += users.vectors[u][d] * items.vectors[i][d];
        scored.emplace_back(s, i);
      }
      std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      std::size_t hits = 0;
      for (std::size_t r = 0; r < k && r < scored.size(); ++r) {
        const auto& pu = positives[u];
        if (std::binary_search(pu.begin(), pu.end(), scored[r].second)) ++hits;
      }
      ++m.users_evaluated;
      if (hits > 0) hit_users += 1.0;
      precision += static_cast<double>(hits) / static_cast<double>(k);
      recall += static_cast<double>(hits) / static_cast<double>(positives[u].size());
    }
    if (m.users_evaluated > 0) {
      const auto n = static_cast<double>(m.users_evaluated);
      m.hitrate = hit_users / n;
      m.precision = precision / n;
      m.recall = recall / n;
    }
    out.push_back(m);
  }
  return out;
}

}  // namespace uma2::testing
