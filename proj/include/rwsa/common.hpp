// Copyright 2026 the rwsaunet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rwsa {

// Error categories double as CLI exit codes.
enum class ErrorKind : int {
  Internal = 1,
  Config = 2,
  Input = 3,
  Weights = 4,
  Verify = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void check(bool cond, const std::string& msg,
                  ErrorKind kind = ErrorKind::Internal) {
  if (!cond) fail(kind, msg);
}

}  // namespace rwsa
