#include "uma2/manifest.hpp"

#include <ctime>

#include "uma2/common.hpp"

namespace uma2 {

std::string iso_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

ManifestWriter::ManifestWriter(const std::filesystem::path& path, const std::string& command) {
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot open manifest for writing: " + path.string());
  record("start", {{"command", command}, {"version", kVersion}, {"time", iso_timestamp()}});
}

ManifestWriter::~ManifestWriter() {
  if (!closed_) finish();
}

void ManifestWriter::record(const std::string& event, nlohmann::json fields) {
  fields["event"] = event;
  out_ << fields.dump() << "\n";
  out_.flush();
}

void ManifestWriter::artifact(const std::string& kind, const std::filesystem::path& path) {
  record("artifact", {{"kind", kind}, {"path", path.string()}});
}

void ManifestWriter::finish() {
  if (closed_) return;
  record("end", {{"status", "ok"}, {"time", iso_timestamp()}});
  closed_ = true;
}

void ManifestWriter::fail(const std::string& error) {
  if (closed_) return;
  record("end", {{"status", "error"}, {"error", error}, {"time", iso_timestamp()}});
  closed_ = true;
}

}  // namespace uma2
