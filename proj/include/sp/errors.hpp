#pragma once

#include <stdexcept>
#include <string>

namespace sp {

enum class IoErrorCode {
  open_failed,
  bad_magic,
  bad_header,
  truncated,
  trailing_data,
  write_failed,
};

// File/stream failures. Carries a distinct code per failure mode so callers
// (and tests) can tell a bad magic from a truncated payload.
class IoError : public std::runtime_error {
 public:
  IoError(IoErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  IoErrorCode code() const { return code_; }

 private:
  IoErrorCode code_;
};

// Invalid or inconsistent run configuration; maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where the pipeline requires finite ones; CLI exit code 4.
class NumericError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sp
