#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "uma2/tensor.hpp"

namespace uma2 {

// Multi-stage traffic generator: entire -> recall -> exposure -> click, with
// known per-pair stage propensities so debiasing can be checked against
// ground truth.
struct FunnelConfig {
  std::size_t num_users = 2000;
  std::size_t num_items = 400;
  std::size_t latent_dim = 16;
  double recall_temp = 4.0;
  double exposure_temp = 2.0;
  double click_temp = 4.0;
  double click_bias = 0.0;
  double feature_noise = 0.1;
  std::size_t avg_recall_size = 40;
  std::size_t avg_exposure_size = 10;
  std::size_t test_positives_per_user = 5;
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError
};

struct World {
  FunnelConfig config;
  std::vector<Vec> user_latent;
  std::vector<Vec> item_latent;
  // Observable features: latent + Gaussian noise. These are what the towers
  // see; the latents themselves never leave the simulator.
  std::vector<Vec> user_features;
  std::vector<Vec> item_features;
  double recall_bias = 0.0;
  double exposure_bias = 0.0;

  std::size_t num_users() const { return user_latent.size(); }
  std::size_t num_items() const { return item_latent.size(); }

  double affinity(std::size_t u, std::size_t i) const;
  double true_p1(std::size_t u, std::size_t i) const;
  double true_p2(std::size_t u, std::size_t i) const;
  // Click probability conditional on exposure.
  double click_prob(std::size_t u, std::size_t i) const;
};

struct OracleRecord {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  double true_p1 = 0.0;
  double true_p2 = 0.0;
  bool recalled = false;
  bool exposed = false;
  bool clicked = false;
};

// Latent vectors ~ N(0,1)/sqrt(latent_dim); affinity is their dot product.
// Recall/exposure bias terms are calibrated here (bisection) so the expected
// per-user recall and exposure set sizes match the configured averages.
World generate_world(const FunnelConfig& config);

// One pass over every (u,i) pair. Emits a record for every recalled pair;
// un-recalled pairs stay implicit. roll_index selects an independent stream
// under the same world.
std::vector<OracleRecord> roll_funnel(const World& world, std::uint64_t roll_index = 0);

// Test positives drawn from the whole catalog in proportion to the true
// click probability, bypassing the recall/exposure funnel. This is the
// unbiased ground truth a debiased matcher should be judged against.
// exclude_per_user[u] lists item ids never to draw for user u (sorted).
std::vector<OracleRecord> draw_test_positives(
    const World& world, const std::vector<std::vector<std::uint32_t>>& exclude_per_user);

// Tab-separated uma2-log-v1 file. When include_oracle is set, true p1/p2 go
// to a sidecar next to `path` (extension replaced by ".oracle"), never into
// the log itself.
void write_logs(const std::vector<OracleRecord>& records, const World& world,
                const std::filesystem::path& path, bool include_oracle);

std::filesystem::path oracle_sidecar_path(const std::filesystem::path& log_path);

struct DatasetPaths {
  std::filesystem::path train_log;
  std::filesystem::path test_log;
};

// One-call dataset: rolls the funnel into train.log and draws test.log
// positives that skip every pair the user already clicked in training.
DatasetPaths write_dataset(const FunnelConfig& config, const std::filesystem::path& dir,
                           bool include_oracle);

}  // namespace uma2
