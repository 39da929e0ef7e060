#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "uma2/checkpoint.hpp"
#include "uma2/config.hpp"
#include "uma2/corpus.hpp"
#include "uma2/eval.hpp"
#include "uma2/gmm.hpp"
#include "uma2/manifest.hpp"
#include "uma2/nsdn.hpp"
#include "uma2/sampling.hpp"

namespace uma2 {

// Per-batch loss decomposition. Each term is the mean over its own entry set
// (0 when the set is empty) and `total` is assembled from the terms exactly
// as written in batch_loss, so additivity can be asserted bit-for-bit.
struct LossReport {
  double loss_pos = 0.0;
  double loss_a = 0.0;
  double loss_b = 0.0;
  double loss_c = 0.0;
  double loss_er = 0.0;
  double loss_re = 0.0;
  double total = 0.0;
  std::size_t n_pos = 0, n_a = 0, n_b = 0, n_c = 0, n_er = 0, n_re = 0;
  // Applied weights on Space A/B entries (positives and C are pinned at 1).
  double weight_sum = 0.0;
  double weight_max = 0.0;
  std::size_t weight_count = 0;
};

struct BatchLossOptions {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double lambda4 = 1.0;
  double lambda5 = 1.0;
  // Off during head-only warm-up epochs.
  bool gmm_grads = true;
  // Off when the propensity heads are dormant (uniform-weight runs).
  bool head_grads = true;
  // Skips the head forwards entirely when their losses are not wanted.
  bool compute_heads = true;
};

// Gradients reuse the model structs as containers of matching shape.
struct ModelGrads {
  TwoTower gmm;
  NsdnModel nsdn;
};

ModelGrads make_zero_grads(const TwoTower& gmm, const NsdnModel& nsdn);

// Forward plus backward over one batch. The scoring loss covers the four
// funnel terms with each entry's current weight read as a constant; the two
// head losses train against the funnel-stage targets. Per-batch work is
// shared across duplicate users/items: each distinct id runs one tower
// forward and one accumulated backward. Throws DivergenceError when any term
// goes non-finite, with the batch composition in the message. Pass
// grads = nullptr for loss-only evaluation.
LossReport batch_loss(const TrainingBatch& batch, const std::vector<Vec>& user_features,
                      const std::vector<Vec>& item_features, const TwoTower& gmm,
                      const NsdnModel& nsdn, const BatchLossOptions& opt, ModelGrads* grads);

// Seed-independent split: marks a user as held out from training iff their
// id hashes into the lowest `fraction` slice. Identical across runs, seeds
// and strategies, so every cell of a comparison holds out the same users.
std::vector<bool> holdout_users(std::size_t num_users, double fraction);

// Fresh models drawn from dedicated init streams, so the scoring model's
// starting point does not depend on whether the heads exist or how wide they
// are.
TwoTower init_gmm(const Config& cfg, std::size_t user_dim, std::size_t item_dim);
NsdnModel init_nsdn(const Config& cfg, std::size_t user_dim, std::size_t item_dim);

// Name -> parameter-vector view over both models, in a fixed structural
// order. The names are the checkpoint block names.
struct TensorRef {
  std::string name;
  Vec* data;
};
std::vector<TensorRef> named_tensors(TwoTower& gmm, NsdnModel& nsdn);

Checkpoint make_checkpoint(const TwoTower& gmm, const NsdnModel& nsdn,
                           const std::map<std::string, AdamState>& optimizer,
                           const CheckpointMeta& meta);

// Rebuilds empty models of the checkpointed topology and fills them in.
std::pair<TwoTower, NsdnModel> models_from_checkpoint(const Checkpoint& ckpt);

// Restores parameters and optimizer moments into already-shaped models;
// throws CheckpointError when a block is missing or shaped differently.
void apply_checkpoint(const Checkpoint& ckpt, TwoTower& gmm, NsdnModel& nsdn,
                      std::map<std::string, AdamState>& optimizer, double learning_rate);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  bool warmup = false;
  LossReport sums;        // per-term sums and counts accumulated over the epoch
  double mean_total = 0.0;
  double holdout_metric = 0.0;  // Recall at the first configured K
  std::size_t holdout_k = 0;
  SamplerCounters counters;
  bool improved = false;
};

struct TrainResult {
  TwoTower gmm;
  NsdnModel nsdn;
  std::vector<EpochStats> history;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  std::size_t epochs_completed = 0;
  bool early_stopped = false;
};

// Full training loop: epoch-shuffled batches, optional inverse-propensity
// weighting, Adam per named tensor, per-epoch holdout evaluation, early
// stopping, and last/best checkpoints plus history.jsonl under out_dir.
// `resume` may name a checkpoint to continue from; the continued run is
// step-for-step identical to one that never stopped. `log` receives the
// per-epoch table (pass nullptr for quiet). Throws DivergenceError when the
// epoch loss blows past 10x the first epoch twice in a row.
TrainResult train(const Corpus& corpus, const Config& cfg, const std::filesystem::path& out_dir,
                  const std::filesystem::path& resume, ManifestWriter* manifest,
                  std::ostream* log);

}  // namespace uma2
