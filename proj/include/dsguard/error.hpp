#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dsguard {

enum class ErrorCode {
  kInvalidArgument,
  kDimension,
  kCapacityExceeded,
  kMalformed,
  kAuthFail,
  kLossyFormat,
  kKeyMismatch,
  kChecksum,
  kIo,
};

std::string_view to_string(ErrorCode code);

/// Every failure in the library surfaces as this exception; `code()` is stable
/// and is what callers (and the CLI exit logic) branch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dsguard
