#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace unitmll {

enum class ErrorKind {
  kInvalidArgument,
  kParse,
  kValidation,
  kIo,
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kNonFinite,
  kInsufficientData,
  kDimensionMismatch,
  kNotFound,
  kContract,
  kTransport,
  kHttpStatus,
  kUndefined,
};

std::string_view ToString(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and the CLI's
// JSON error channel) can tell them apart without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace unitmll
