#include "dsguard/error.hpp"

namespace dsguard {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::kDimension: return "DIMENSION";
    case ErrorCode::kCapacityExceeded: return "CAPACITY_EXCEEDED";
    case ErrorCode::kMalformed: return "MALFORMED";
    case ErrorCode::kAuthFail: return "AUTH_FAIL";
    case ErrorCode::kLossyFormat: return "LOSSY_FORMAT";
    case ErrorCode::kKeyMismatch: return "KEY_MISMATCH";
    case ErrorCode::kChecksum: return "CHECKSUM";
    case ErrorCode::kIo: return "IO";
  }
  return "UNKNOWN";
}

}  // namespace dsguard
