#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uma2/sim.hpp"

namespace uma2 {

enum class Strategy { SsA, SsAb, SsAbcRandom, SsAbcFixed };

Strategy parse_strategy(const std::string& name);
std::string to_string(Strategy s);

enum class SharingMode { FullySeparate, SharedInputLayer };

SharingMode parse_sharing_mode(const std::string& name);
std::string to_string(SharingMode m);

struct SamplingConfig {
  Strategy strategy = Strategy::SsAbcFixed;
  // A:B:C negative counts per positive under the fixed strategy.
  std::size_t ratio_a = 1;
  std::size_t ratio_b = 4;
  std::size_t ratio_c = 20;
  // Total negatives per positive for the non-fixed strategies, kept equal to
  // the ratio sum by default so ablation cells see the same batch volume.
  std::size_t negatives_per_positive = 25;

  std::size_t ratio_sum() const { return ratio_a + ratio_b + ratio_c; }
  std::size_t per_positive(Strategy s) const {
    return s == Strategy::SsAbcFixed ? ratio_sum() : negatives_per_positive;
  }
};

struct ModelConfig {
  // Hidden and output widths of each scoring tower; the input width comes
  // from the data. Desk-scale default; see configs/paper.cfg for the full-
  // size 512,256,128,32 stack.
  std::vector<std::size_t> dims = {64, 32};
};

struct NsdnConfig {
  double p_floor = 0.01;
  double w_max = 100.0;
  SharingMode sharing_mode = SharingMode::FullySeparate;
  std::vector<std::size_t> dims = {32, 16};
};

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 512;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double lambda4 = 1.0;
  double lambda5 = 1.0;
  std::size_t patience = 3;
  // Epochs during which only the propensity heads learn (weights pinned at 1).
  std::size_t warmup_epochs = 0;
  bool debias = true;
  double holdout_fraction = 0.05;
};

struct EvalConfig {
  std::vector<std::size_t> k_list = {50};
  bool exclude_train_positives = true;
};

struct AblationConfig {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

// Every tunable of the pipeline, addressable as flat dotted keys
// ("train.lr = 0.001"). Defaults are a desk-scale setup that trains in
// seconds; parsing an empty file yields exactly these defaults.
struct Config {
  FunnelConfig sim;
  SamplingConfig sampling;
  ModelConfig model;
  NsdnConfig nsdn;
  TrainConfig train;
  EvalConfig eval;
  AblationConfig ablation;

  // Applies one key/value pair; throws ConfigError naming the key when it is
  // unknown or the value does not parse.
  void set(const std::string& key, const std::string& value);

  // Sets both sim.seed and train.seed, the meaning of the CLI --seed flag.
  void set_master_seed(std::uint64_t seed);

  void validate() const;

  // All keys with their current values, in sorted key order. This is what the
  // run manifest records and what keeps configs/desk.cfg honest.
  std::map<std::string, std::string> resolved() const;

  static Config from_file(const std::filesystem::path& path);
  static Config from_string(const std::string& text);
};

}  // namespace uma2
