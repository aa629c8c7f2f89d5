#pragma once

#include <stdexcept>
#include <string>

namespace tellme {

enum class ErrorCode {
  kInvalidTrit,
  kRange,
  kShape,
  kNumeric,
  kEmptyStream,
  kContextOverflow,
  kConfig,
  kIo,
  kTruncated,
  kBadMagic,
  kBadVersion,
  kLengthMismatch,
  kChecksum,
};

const char* to_string(ErrorCode code) noexcept;

// Every failure raised by the library carries one of the codes above so
// callers (the CLI in particular) can map them to exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const char* what) {
  if (!cond) fail(code, what);
}
inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace tellme
