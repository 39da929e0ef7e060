#include "uma2/sampling.hpp"

#include <algorithm>

#include "uma2/common.hpp"

namespace uma2 {

namespace {

bool contains(const std::vector<std::uint32_t>& sorted, std::uint32_t id) {
  return std::binary_search(sorted.begin(), sorted.end(), id);
}

// Uniform draw of `want` distinct items from an explicit pool; when the pool
// is smaller the whole pool is taken and the remainder repeats. Reports how
// the quota was met through the two flags.
void draw_pool(const std::vector<std::uint32_t>& pool, std::size_t want, std::mt19937_64& rng,
               std::vector<std::uint32_t>& out, bool& fell_back, bool& fell_short) {
  if (want == 0) return;
  if (pool.empty()) {
    fell_short = true;
    return;
  }
  if (pool.size() <= want) {
    out.insert(out.end(), pool.begin(), pool.end());
    if (pool.size() < want) {
      fell_back = true;
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (std::size_t k = pool.size(); k < want; ++k) out.push_back(pool[pick(rng)]);
    }
    return;
  }
  // Partial Fisher-Yates on an index array keeps draws uniform without
  // rejection loops, and pools here are small (recall-set sized).
  std::vector<std::uint32_t> copy(pool);
  for (std::size_t k = 0; k < want; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, copy.size() - 1);
    std::swap(copy[k], copy[pick(rng)]);
    out.push_back(copy[k]);
  }
}

// Uniform draw of `want` distinct items from the complement of `excluded`
// (sorted). Rejection sampling against the full item range; falls back to
// materializing the complement when it is too small for rejection to be
// cheap.
void draw_complement(std::size_t num_items, const std::vector<std::uint32_t>& excluded,
                     std::size_t want, std::mt19937_64& rng, std::vector<std::uint32_t>& out,
                     bool& fell_back, bool& fell_short) {
  if (want == 0) return;
  const std::size_t available = num_items - excluded.size();
  if (available < 2 * want + 8) {
    std::vector<std::uint32_t> pool;
    pool.reserve(available);
    for (std::uint32_t i = 0; i < num_items; ++i) {
      if (!contains(excluded, i)) pool.push_back(i);
    }
    draw_pool(pool, want, rng, out, fell_back, fell_short);
    return;
  }
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(num_items - 1));
  std::vector<std::uint32_t> drawn;
  drawn.reserve(want);
  while (drawn.size() < want) {
    const std::uint32_t i = pick(rng);
    if (contains(excluded, i)) continue;
    if (std::find(drawn.begin(), drawn.end(), i) != drawn.end()) continue;
    drawn.push_back(i);
  }
  out.insert(out.end(), drawn.begin(), drawn.end());
}

void emit(std::vector<BatchEntry>& out, std::uint32_t user, const std::vector<std::uint32_t>& items,
          SpaceLabel space) {
  for (std::uint32_t i : items) {
    BatchEntry e;
    e.user = user;
    e.item = i;
    e.space = space;
    out.push_back(e);
  }
}

SpaceLabel lookup_label(const Corpus& corpus, std::uint32_t user, std::uint32_t item) {
  if (contains(corpus.space_a[user], item)) return SpaceLabel::SpaceA;
  if (contains(corpus.space_b[user], item)) return SpaceLabel::SpaceB;
  return SpaceLabel::SpaceC;
}

}  // namespace

std::vector<BatchEntry> sample_negatives(const Corpus& corpus, std::uint32_t user,
                                         const SamplingConfig& cfg, std::mt19937_64& rng,
                                         SamplerCounters& counters) {
  std::vector<BatchEntry> out;
  bool fell_back = false, fell_short = false;
  std::vector<std::uint32_t> items;

  switch (cfg.strategy) {
    case Strategy::SsA: {
      if (corpus.space_a[user].empty()) {
        ++counters.skipped_positives;
        return out;
      }
      draw_pool(corpus.space_a[user], cfg.negatives_per_positive, rng, items, fell_back,
                fell_short);
      emit(out, user, items, SpaceLabel::SpaceA);
      break;
    }
    case Strategy::SsAb: {
      const std::size_t total = cfg.negatives_per_positive;
      const std::size_t from_a = total / 2;
      draw_pool(corpus.space_a[user], from_a, rng, items, fell_back, fell_short);
      emit(out, user, items, SpaceLabel::SpaceA);
      items.clear();
      draw_pool(corpus.space_b[user], total - from_a, rng, items, fell_back, fell_short);
      emit(out, user, items, SpaceLabel::SpaceB);
      break;
    }
    case Strategy::SsAbcRandom: {
      draw_complement(corpus.num_items(), corpus.positives[user], cfg.negatives_per_positive, rng,
                      items, fell_back, fell_short);
      for (std::uint32_t i : items) {
        BatchEntry e;
        e.user = user;
        e.item = i;
        e.space = lookup_label(corpus, user, i);
        out.push_back(e);
      }
      break;
    }
    case Strategy::SsAbcFixed: {
      draw_pool(corpus.space_a[user], cfg.ratio_a, rng, items, fell_back, fell_short);
      emit(out, user, items, SpaceLabel::SpaceA);
      items.clear();
      draw_pool(corpus.space_b[user], cfg.ratio_b, rng, items, fell_back, fell_short);
      emit(out, user, items, SpaceLabel::SpaceB);
      items.clear();
      draw_complement(corpus.num_items(), corpus.recalled[user], cfg.ratio_c, rng, items,
                      fell_back, fell_short);
      emit(out, user, items, SpaceLabel::SpaceC);
      break;
    }
  }
  if (fell_back) ++counters.fallback_positives;
  if (fell_short) ++counters.short_positives;
  return out;
}

std::vector<PositivePair> collect_positives(const Corpus& corpus) {
  std::vector<PositivePair> out;
  for (std::uint32_t u = 0; u < corpus.positives.size(); ++u) {
    for (std::uint32_t i : corpus.positives[u]) out.emplace_back(u, i);
  }
  return out;
}

BatchStream::BatchStream(const Corpus& corpus, std::vector<PositivePair> positives,
                         const SamplingConfig& cfg, std::size_t batch_size,
                         std::mt19937_64 shuffle_rng, std::mt19937_64 negative_rng)
    : corpus_(&corpus),
      positives_(std::move(positives)),
      cfg_(cfg),
      negative_rng_(negative_rng) {
  if (positives_.empty()) throw ConfigError("no positives to train on");
  if (batch_size == 0) throw ConfigError("train.batch_size must be > 0");
  const std::size_t per_pos = 1 + cfg_.per_positive(cfg_.strategy);
  positives_per_batch_ = (batch_size + per_pos - 1) / per_pos;
  if (positives_per_batch_ == 0) positives_per_batch_ = 1;
  std::shuffle(positives_.begin(), positives_.end(), shuffle_rng);
}

std::size_t BatchStream::num_batches() const {
  return (positives_.size() + positives_per_batch_ - 1) / positives_per_batch_;
}

bool BatchStream::next(TrainingBatch& out) {
  out.strategy = cfg_.strategy;
  while (cursor_ < positives_.size()) {
    out.entries.clear();
    const std::size_t stop = std::min(cursor_ + positives_per_batch_, positives_.size());
    for (; cursor_ < stop; ++cursor_) {
      const auto [user, item] = positives_[cursor_];
      std::vector<BatchEntry> negatives =
          sample_negatives(*corpus_, user, cfg_, negative_rng_, counters_);
      if (negatives.empty() && cfg_.strategy == Strategy::SsA && corpus_->space_a[user].empty()) {
        continue;  // the skip counter was already bumped
      }
      BatchEntry pos;
      pos.user = user;
      pos.item = item;
      pos.space = SpaceLabel::PositiveClick;
      out.entries.push_back(pos);
      out.entries.insert(out.entries.end(), negatives.begin(), negatives.end());
    }
    // A group where every positive was skipped yields nothing; move on to the
    // next group rather than emitting an empty batch.
    if (!out.entries.empty()) return true;
  }
  out.entries.clear();
  return false;
}

}  // namespace uma2
