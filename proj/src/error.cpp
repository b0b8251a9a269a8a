#include "mtdlift/error.hpp"

namespace mtdlift {

std::string_view error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Taxonomy: return "taxonomy";
    case ErrorKind::Size: return "size";
    case ErrorKind::Calibration: return "calibration";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Training: return "training";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::Io: return "io";
    case ErrorKind::Internal: return "internal";
  }
  return "internal";
}

}  // namespace mtdlift
