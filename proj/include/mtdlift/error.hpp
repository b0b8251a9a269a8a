#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mtdlift {

// Failure classes. Each maps 1:1 onto a C status code and a CLI exit class.
enum class ErrorKind {
  InvalidArgument,
  Parse,
  Schema,
  Taxonomy,
  Size,
  Calibration,
  Numeric,
  Training,
  Degenerate,
  Io,
  Internal,
};

std::string_view error_kind_name(ErrorKind kind) noexcept;

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

}  // namespace mtdlift
