#include "uma2/gmm.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>

#include "uma2/common.hpp"

namespace uma2 {

TwoTower make_two_tower(std::size_t user_dim, std::size_t item_dim,
                        const std::vector<std::size_t>& dims, std::mt19937_64& rng) {
  TwoTower model;
  model.user_tower = make_mlp(user_dim, dims, rng);
  model.item_tower = make_mlp(item_dim, dims, rng);
  return model;
}

Vec user_forward(const TwoTower& model, const Vec& features) {
  return mlp_forward(model.user_tower, features, nullptr);
}

Vec item_forward(const TwoTower& model, const Vec& features) {
  return mlp_forward(model.item_tower, features, nullptr);
}

double score(const Vec& user_vec, const Vec& item_vec) { return dot(user_vec, item_vec); }

EmbeddingTable embed_all(const Mlp& tower, const std::vector<Vec>& features,
                         const std::vector<bool>& seen) {
  EmbeddingTable table;
  table.dim = tower.output_dim();
  table.vectors.resize(features.size());
  table.present.assign(features.size(), false);
  for (std::size_t id = 0; id < features.size(); ++id) {
    if (!seen[id]) continue;
    table.vectors[id] = mlp_forward(tower, features[id], nullptr);
    table.present[id] = true;
  }
  return table;
}

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open embedding file for writing: " + path.string());
  out << "#schema=" << kEmbeddingSchema << " dim=" << table.dim << "\n";
  for (std::size_t id = 0; id < table.vectors.size(); ++id) {
    if (!table.present[id]) continue;
    out << id << '\t';
    const Vec& v = table.vectors[id];
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (k) out << ',';
      out << fmt_double(v[k]);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file: " + path.string());
  const std::string origin = path.string();

  EmbeddingTable table;
  std::string line;
  std::size_t lineno = 0;
  bool saw_schema = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string prefix = std::string("#schema=") + std::string(kEmbeddingSchema) + " dim=";
      if (line.rfind(prefix, 0) == 0) {
        table.dim = static_cast<std::size_t>(std::strtoul(line.c_str() + prefix.size(), nullptr, 10));
        if (table.dim == 0) {
          throw ParseError(origin + ":" + std::to_string(lineno) + ": bad dim in header");
        }
        saw_schema = true;
      } else if (line.rfind("#schema=", 0) == 0) {
        throw ParseError(origin + ":" + std::to_string(lineno) + ": unsupported schema");
      }
      continue;
    }
    if (!saw_schema) {
      throw ParseError(origin + ":" + std::to_string(lineno) + ": missing schema header");
    }
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected `id<TAB>values`");
    }
    errno = 0;
    char* end = nullptr;
    const unsigned long id = std::strtoul(line.c_str(), &end, 10);
    if (errno != 0 || end != line.c_str() + tab) {
      throw ParseError(origin + ":" + std::to_string(lineno) + ": bad id");
    }
    Vec v;
    v.reserve(table.dim);
    const char* p = line.c_str() + tab + 1;
    while (true) {
      errno = 0;
      char* vend = nullptr;
      const double x = std::strtod(p, &vend);
      if (errno != 0 || vend == p) {
        throw ParseError(origin + ":" + std::to_string(lineno) + ": bad value list");
      }
      v.push_back(x);
      if (*vend == '\0') break;
      if (*vend != ',') throw ParseError(origin + ":" + std::to_string(lineno) + ": bad value list");
      p = vend + 1;
    }
    if (v.size() != table.dim) {
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(table.dim) + " values, got " + std::to_string(v.size()));
    }
    if (id >= table.vectors.size()) {
      table.vectors.resize(id + 1);
      table.present.resize(id + 1, false);
    }
    table.vectors[id] = std::move(v);
    table.present[id] = true;
  }
  if (!saw_schema) throw ParseError(origin + ": missing schema header");
  return table;
}

}  // namespace uma2
