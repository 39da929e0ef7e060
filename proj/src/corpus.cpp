#include "uma2/corpus.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>

#include "uma2/common.hpp"

namespace uma2 {

const char* to_string(SpaceLabel label) {
  switch (label) {
    case SpaceLabel::PositiveClick: return "positive";
    case SpaceLabel::SpaceA: return "space-a";
    case SpaceLabel::SpaceB: return "space-b";
    case SpaceLabel::SpaceC: return "space-c";
  }
  return "space-c";
}

SpaceLabel space_label(bool clicked, bool exposed, bool recalled) {
  if ((clicked && !exposed) || (exposed && !recalled)) {
    throw ParseError("funnel flags out of order (need clicked <= exposed <= recalled)");
  }
  if (clicked) return SpaceLabel::PositiveClick;
  if (exposed) return SpaceLabel::SpaceA;
  if (recalled) return SpaceLabel::SpaceB;
  return SpaceLabel::SpaceC;
}

std::size_t Corpus::user_feature_dim() const {
  for (std::size_t u = 0; u < user_features.size(); ++u) {
    if (user_seen[u]) return user_features[u].size();
  }
  return 0;
}

std::size_t Corpus::item_feature_dim() const {
  for (std::size_t i = 0; i < item_features.size(); ++i) {
    if (item_seen[i]) return item_features[i].size();
  }
  return 0;
}

void Corpus::rebuild_indexes() {
  positives.assign(num_users(), {});
  space_a.assign(num_users(), {});
  space_b.assign(num_users(), {});
  recalled.assign(num_users(), {});
  label_counts = {0, 0, 0, 0};
  for (const InteractionRecord& r : interactions) {
    ++label_counts[static_cast<std::size_t>(r.space)];
    switch (r.space) {
      case SpaceLabel::PositiveClick: positives[r.user].push_back(r.item); break;
      case SpaceLabel::SpaceA: space_a[r.user].push_back(r.item); break;
      case SpaceLabel::SpaceB: space_b[r.user].push_back(r.item); break;
      case SpaceLabel::SpaceC: break;
    }
    if (r.recalled) recalled[r.user].push_back(r.item);
  }
  auto sort_unique = [](std::vector<std::vector<std::uint32_t>>& lists) {
    for (auto& l : lists) {
      std::sort(l.begin(), l.end());
      l.erase(std::unique(l.begin(), l.end()), l.end());
    }
  };
  sort_unique(positives);
  sort_unique(space_a);
  sort_unique(space_b);
  sort_unique(recalled);
}

namespace {

[[noreturn]] void fail(const std::string& path, std::size_t lineno, const std::string& what) {
  throw ParseError(path + ":" + std::to_string(lineno) + ": " + what);
}

std::uint32_t parse_id(const std::string& path, std::size_t lineno, const std::string& field) {
  errno = 0;
  char* end = nullptr;
  const unsigned long v = std::strtoul(field.c_str(), &end, 10);
  if (errno != 0 || end == field.c_str() || *end != '\0' || v > 0xFFFFFFFFul) {
    fail(path, lineno, "bad id field '" + field + "'");
  }
  return static_cast<std::uint32_t>(v);
}

bool parse_flag(const std::string& path, std::size_t lineno, const std::string& field) {
  if (field == "0") return false;
  if (field == "1") return true;
  fail(path, lineno, "bad flag field '" + field + "' (expected 0 or 1)");
}

Vec parse_features(const std::string& path, std::size_t lineno, const std::string& field) {
  Vec out;
  const char* p = field.c_str();
  while (true) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(p, &end);
    if (errno != 0 || end == p) fail(path, lineno, "bad feature list '" + field + "'");
    out.push_back(v);
    if (*end == '\0') break;
    if (*end != ',') fail(path, lineno, "bad feature list '" + field + "'");
    p = end + 1;
  }
  return out;
}

// Stores features at `id`, growing the table; a second sighting of the same
// id must carry identical features.
void store_features(const std::string& path, std::size_t lineno, std::vector<Vec>& table,
                    std::vector<bool>& seen, std::uint32_t id, Vec features, const char* kind) {
  if (id >= table.size()) {
    table.resize(id + 1);
    seen.resize(id + 1, false);
  }
  if (!seen[id]) {
    table[id] = std::move(features);
    seen[id] = true;
    return;
  }
  if (table[id] != features) {
    fail(path, lineno, std::string("conflicting features for ") + kind + " " + std::to_string(id));
  }
}

}  // namespace

Corpus ingest_logs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open log file: " + path.string());
  const std::string origin = path.string();

  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  bool saw_schema = false;
  std::size_t user_dim = 0, item_dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("#schema=", 0) == 0) {
        const std::string schema = line.substr(8);
        if (schema != kLogSchema) {
          fail(origin, lineno, "unsupported schema '" + schema + "' (expected " + std::string(kLogSchema) + ")");
        }
        saw_schema = true;
      }
      continue;
    }
    if (!saw_schema) fail(origin, lineno, std::string("missing #schema=") + std::string(kLogSchema) + " header");

    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (fields.size() != 7) fail(origin, lineno, "expected 7 tab-separated fields");

    InteractionRecord rec;
    rec.user = parse_id(origin, lineno, fields[0]);
    rec.item = parse_id(origin, lineno, fields[1]);
    rec.clicked = parse_flag(origin, lineno, fields[2]);
    rec.exposed = parse_flag(origin, lineno, fields[3]);
    rec.recalled = parse_flag(origin, lineno, fields[4]);
    try {
      rec.space = space_label(rec.clicked, rec.exposed, rec.recalled);
    } catch (const ParseError& e) {
      fail(origin, lineno, e.what());
    }

    Vec uf = parse_features(origin, lineno, fields[5]);
    Vec itf = parse_features(origin, lineno, fields[6]);
    if (user_dim == 0) user_dim = uf.size();
    if (item_dim == 0) item_dim = itf.size();
    if (uf.size() != user_dim || itf.size() != item_dim) {
      fail(origin, lineno, "inconsistent feature dimensions");
    }
    store_features(origin, lineno, corpus.user_features, corpus.user_seen, rec.user,
                   std::move(uf), "user");
    store_features(origin, lineno, corpus.item_features, corpus.item_seen, rec.item,
                   std::move(itf), "item");
    corpus.interactions.push_back(rec);
  }
  if (!saw_schema) {
    throw ParseError(origin + ": missing #schema=" + std::string(kLogSchema) + " header");
  }
  corpus.rebuild_indexes();
  return corpus;
}

void absorb_features(Corpus& into, const Corpus& from) {
  if (from.num_users() > into.num_users()) {
    into.user_features.resize(from.num_users());
    into.user_seen.resize(from.num_users(), false);
  }
  if (from.num_items() > into.num_items()) {
    into.item_features.resize(from.num_items());
    into.item_seen.resize(from.num_items(), false);
  }
  for (std::size_t u = 0; u < from.num_users(); ++u) {
    if (!from.user_seen[u]) continue;
    if (!into.user_seen[u]) {
      into.user_features[u] = from.user_features[u];
      into.user_seen[u] = true;
    } else if (into.user_features[u] != from.user_features[u]) {
      throw ParseError("conflicting features for user " + std::to_string(u) + " across files");
    }
  }
  for (std::size_t i = 0; i < from.num_items(); ++i) {
    if (!from.item_seen[i]) continue;
    if (!into.item_seen[i]) {
      into.item_features[i] = from.item_features[i];
      into.item_seen[i] = true;
    } else if (into.item_features[i] != from.item_features[i]) {
      throw ParseError("conflicting features for item " + std::to_string(i) + " across files");
    }
  }
  into.positives.resize(into.num_users());
  into.space_a.resize(into.num_users());
  into.space_b.resize(into.num_users());
  into.recalled.resize(into.num_users());
}

}  // namespace uma2
