#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

namespace uma2 {

// UTC wall-clock time as "2025-01-31T12:00:00Z".
std::string iso_timestamp();

// Append-only JSON-lines run log. Every run writes one: a start record with
// the code version, free-form event records, and an end record carrying the
// outcome. Timestamps appear only here, which keeps every other artifact
// byte-reproducible for a fixed seed.
class ManifestWriter {
 public:
  ManifestWriter(const std::filesystem::path& path, const std::string& command);
  ~ManifestWriter();

  // Writes one record; an "event" field with `event` is added to `fields`.
  void record(const std::string& event, nlohmann::json fields = nlohmann::json::object());

  // Registers a produced file so the manifest lists every artifact.
  void artifact(const std::string& kind, const std::filesystem::path& path);

  // Terminal records; exactly one of these ends the manifest. finish() is
  // implied by destruction if neither was called.
  void finish();
  void fail(const std::string& error);

 private:
  std::ofstream out_;
  bool closed_ = false;
};

}  // namespace uma2
