#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uma2/tensor.hpp"

namespace uma2 {

inline constexpr char kCheckpointMagic[8] = {'U', 'M', 'A', '2', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t epochs_completed = 0;
  double best_metric = 0.0;
  std::uint64_t best_epoch = 0;
  std::uint64_t epochs_since_best = 0;
  std::uint64_t user_dim = 0;
  std::uint64_t item_dim = 0;
  std::uint8_t sharing_mode = 0;
  std::vector<std::uint64_t> model_dims;
  std::vector<std::uint64_t> nsdn_dims;
};

// A flat view of everything training needs to continue: model parameters and
// optimizer moments as named f64 blocks, topology and progress in the meta
// header. The map keeps blocks name-sorted, so identical state always
// serializes to identical bytes.
struct Checkpoint {
  CheckpointMeta meta;
  std::map<std::string, Vec> blocks;
};

// Little-endian binary write through a temp file plus rename, so a crash
// mid-save never leaves a half-written checkpoint behind.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// Throws CheckpointError on bad magic, a version other than
// kCheckpointVersion (naming both), or truncation. Nothing is returned
// partially: the file is either fully decoded or rejected.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace uma2
