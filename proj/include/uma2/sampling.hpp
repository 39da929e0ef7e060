#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "uma2/config.hpp"
#include "uma2/corpus.hpp"

namespace uma2 {

struct BatchEntry {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  SpaceLabel space = SpaceLabel::SpaceC;
  // Loss weight, 1.0 at assembly time; the propensity stage overwrites it for
  // Space A/B entries before the optimizer sees the batch.
  double weight = 1.0;
};

struct TrainingBatch {
  std::vector<BatchEntry> entries;
  Strategy strategy = Strategy::SsAbcFixed;
};

struct SamplerCounters {
  // Positives dropped because ss-a found an empty Space A for that user.
  std::size_t skipped_positives = 0;
  // Positives whose per-space quota exceeded the pool, filled by drawing with
  // replacement within that space.
  std::size_t fallback_positives = 0;
  // Positives that ended up short because a required space had no items at
  // all (nothing to repeat).
  std::size_t short_positives = 0;

  void add(const SamplerCounters& other) {
    skipped_positives += other.skipped_positives;
    fallback_positives += other.fallback_positives;
    short_positives += other.short_positives;
  }
  bool clean() const {
    return skipped_positives == 0 && fallback_positives == 0 && short_positives == 0;
  }
};

// Draws the negatives for one (user, clicked-item) positive under the
// configured strategy. Items are distinct within the call; thin spaces fall
// back to repetition and bump the counters. An empty result with
// skipped_positives bumped means the positive itself should be dropped
// (ss-a with no Space A).
std::vector<BatchEntry> sample_negatives(const Corpus& corpus, std::uint32_t user,
                                         const SamplingConfig& cfg, std::mt19937_64& rng,
                                         SamplerCounters& counters);

using PositivePair = std::pair<std::uint32_t, std::uint32_t>;

// Flattens the corpus's per-user positive lists into (user, item) pairs in
// ascending (user, item) order.
std::vector<PositivePair> collect_positives(const Corpus& corpus);

// One epoch of batches: positives shuffled once up front, then grouped so
// each batch carries about batch_size entries once negatives are attached.
// Entry order inside a batch is positive, its A negatives, B, C, repeated per
// positive. The two generators keep the positive order independent of how
// many negative draws each strategy consumes.
class BatchStream {
 public:
  BatchStream(const Corpus& corpus, std::vector<PositivePair> positives,
              const SamplingConfig& cfg, std::size_t batch_size, std::mt19937_64 shuffle_rng,
              std::mt19937_64 negative_rng);

  // Fills `out` with the next batch; false once the epoch is exhausted.
  bool next(TrainingBatch& out);

  std::size_t positives_per_batch() const { return positives_per_batch_; }
  std::size_t num_batches() const;
  const SamplerCounters& counters() const { return counters_; }

 private:
  const Corpus* corpus_;
  std::vector<PositivePair> positives_;
  SamplingConfig cfg_;
  std::size_t positives_per_batch_;
  std::size_t cursor_ = 0;
  std::mt19937_64 negative_rng_;
  SamplerCounters counters_;
};

}  // namespace uma2
