#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace geodp {

enum class ErrorKind {
  shape,
  numeric,
  usage,
  config,
  coherence,
  io,
  range,
};

inline std::string_view kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape_error";
    case ErrorKind::numeric: return "numeric_error";
    case ErrorKind::usage: return "usage_error";
    case ErrorKind::config: return "config_error";
    case ErrorKind::coherence: return "coherence_error";
    case ErrorKind::io: return "io_error";
    case ErrorKind::range: return "range_error";
  }
  return "error";
}

// Every failure surfaced by the library carries a kind so the CLI can emit
// machine-readable diagnostics.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace geodp
