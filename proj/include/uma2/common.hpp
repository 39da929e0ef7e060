#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace uma2 {

inline constexpr std::string_view kLogSchema = "uma2-log-v1";
inline constexpr std::string_view kOracleSchema = "uma2-oracle-v1";
inline constexpr std::string_view kEmbeddingSchema = "uma2-emb-v1";
inline constexpr std::string_view kVersion = "0.1.0";

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed log/embedding file content. Message carries "<path>:<line>:".
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training aborted: loss blew past the divergence threshold or went non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shortest decimal form that round-trips a double exactly.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  std::sscanf(buf, "%lf", &back);
  if (back == v) {
    for (int prec = 1; prec < 17; ++prec) {
      char probe[40];
      std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
      std::sscanf(probe, "%lf", &back);
      if (back == v) return probe;
    }
  }
  return buf;
}

}  // namespace uma2
