// Copyright 2026 The msecnet Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace msecnet {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kInvalidArgument,
  kShape,
  kNumeric,
  kParse,
  kConsistency,
  kIo,
  kLifecycle,
  kDegenerate,
  kCoverage,
  kDeterminism,
  kUninitializedStats,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kConsistency: return "consistency error";
    case ErrorKind::kIo: return "I/O error";
    case ErrorKind::kLifecycle: return "lifecycle error";
    case ErrorKind::kDegenerate: return "degenerate input";
    case ErrorKind::kCoverage: return "coverage error";
    case ErrorKind::kDeterminism: return "determinism error";
    case ErrorKind::kUninitializedStats: return "uninitialized statistics";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace msecnet

// The message expression is evaluated only when the check fails.
#define MSECNET_REQUIRE(condition, kind, what)           \
  do {                                                   \
    if (!(condition)) ::msecnet::fail((kind), (what));   \
  } while (false)
