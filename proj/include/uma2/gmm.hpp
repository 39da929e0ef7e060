#pragma once

#include <filesystem>
#include <random>
#include <vector>

#include "uma2/corpus.hpp"
#include "uma2/tensor.hpp"

namespace uma2 {

// The pluggable scoring model: two MLP towers whose output embeddings meet in
// an inner product. Anything that can produce user and item vectors of equal
// length can stand in for it; the trainer only touches the operations below.
struct TwoTower {
  Mlp user_tower;
  Mlp item_tower;
};

// Both towers share the layer width list; inputs may differ in width. The
// last layer is linear so embeddings can carry negative coordinates.
TwoTower make_two_tower(std::size_t user_dim, std::size_t item_dim,
                        const std::vector<std::size_t>& dims, std::mt19937_64& rng);

Vec user_forward(const TwoTower& model, const Vec& features);
Vec item_forward(const TwoTower& model, const Vec& features);

// Inner-product similarity; the click probability is sigmoid(score).
double score(const Vec& user_vec, const Vec& item_vec);

struct EmbeddingTable {
  std::size_t dim = 0;
  std::vector<Vec> vectors;
  std::vector<bool> present;
};

// Runs a tower over every seen feature row. Rows never seen in the logs stay
// absent.
EmbeddingTable embed_all(const Mlp& tower, const std::vector<Vec>& features,
                         const std::vector<bool>& seen);

// Tab-separated export, one row per present id: `id \t v_0,v_1,...` with a
// `#schema=uma2-emb-v1 dim=N` header.
void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);

EmbeddingTable read_embeddings(const std::filesystem::path& path);

}  // namespace uma2
