#include "tellme/error.hpp"

namespace tellme {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidTrit: return "invalid trit";
    case ErrorCode::kRange: return "out of range";
    case ErrorCode::kShape: return "shape mismatch";
    case ErrorCode::kNumeric: return "numeric error";
    case ErrorCode::kEmptyStream: return "empty stream";
    case ErrorCode::kContextOverflow: return "context overflow";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kTruncated: return "truncated file";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kBadVersion: return "unsupported version";
    case ErrorCode::kLengthMismatch: return "length mismatch";
    case ErrorCode::kChecksum: return "checksum mismatch";
  }
  return "unknown error";
}

}  // namespace tellme
