#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uma2/tensor.hpp"

namespace uma2 {

// Disjoint funnel outcome of a (user, item) pair: clicked, exposed without a
// click, recalled without exposure, or outside the recall set entirely.
enum class SpaceLabel : std::uint8_t { PositiveClick, SpaceA, SpaceB, SpaceC };

const char* to_string(SpaceLabel label);

// Derives the label from the three log flags; throws ParseError when the
// flags break funnel order (clicked without exposure, exposed without recall).
SpaceLabel space_label(bool clicked, bool exposed, bool recalled);

struct InteractionRecord {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  bool clicked = false;
  bool exposed = false;
  bool recalled = false;
  SpaceLabel space = SpaceLabel::SpaceC;
};

// In-memory view of one or more log files. Feature tables are indexed by id;
// ids not mentioned in any line have empty feature vectors and count as
// unseen. Pairs absent from the logs are implicitly in Space C and are never
// materialized here.
struct Corpus {
  std::vector<Vec> user_features;
  std::vector<Vec> item_features;
  std::vector<bool> user_seen;
  std::vector<bool> item_seen;
  std::vector<InteractionRecord> interactions;

  // Per-user item-id lists, each sorted ascending; rebuilt by
  // rebuild_indexes() after ingestion.
  std::vector<std::vector<std::uint32_t>> positives;
  std::vector<std::vector<std::uint32_t>> space_a;
  std::vector<std::vector<std::uint32_t>> space_b;
  std::vector<std::vector<std::uint32_t>> recalled;

  std::array<std::size_t, 4> label_counts = {0, 0, 0, 0};

  std::size_t num_users() const { return user_features.size(); }
  std::size_t num_items() const { return item_features.size(); }
  std::size_t user_feature_dim() const;
  std::size_t item_feature_dim() const;

  void rebuild_indexes();
};

// Parses one uma2-log-v1 file into a fresh corpus, labels every line, and
// builds the per-user indexes. Malformed input raises ParseError with the
// offending line number; conflicting features for an id raise ParseError too.
Corpus ingest_logs(const std::filesystem::path& path);

// Copies features for ids that `into` has not seen from `from`, growing the
// tables as needed. Lets evaluation embed items that only appear in the
// training log (or vice versa). Interactions are not merged.
void absorb_features(Corpus& into, const Corpus& from);

}  // namespace uma2
