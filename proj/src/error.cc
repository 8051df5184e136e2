#include "unitmll/error.h"

namespace unitmll {

std::string_view ToString(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kParse: return "parse_error";
    case ErrorKind::kValidation: return "validation_error";
    case ErrorKind::kIo: return "io_error";
    case ErrorKind::kBadMagic: return "bad_magic";
    case ErrorKind::kUnsupportedVersion: return "unsupported_version";
    case ErrorKind::kTruncated: return "truncated";
    case ErrorKind::kNonFinite: return "non_finite";
    case ErrorKind::kInsufficientData: return "insufficient_data";
    case ErrorKind::kDimensionMismatch: return "dimension_mismatch";
    case ErrorKind::kNotFound: return "not_found";
    case ErrorKind::kContract: return "contract_violation";
    case ErrorKind::kTransport: return "transport_error";
    case ErrorKind::kHttpStatus: return "http_status";
    case ErrorKind::kUndefined: return "undefined";
  }
  return "unknown";
}

}  // namespace unitmll
