// Copyright 2026 The norm-forge Authors.
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
#include <string_view>

namespace normforge {

/// Error classes surfaced by the library. The CLI maps each class onto a
/// distinct exit code, so new kinds must be added to `exit_code_for` too.
enum class ErrorKind {
  Config,
  Ingest,
  MissingPrerequisite,
  Retryable,
  Protocol,
  Credential,
  Integrity,
  Unrateable,
  Degenerate,
  RankDeficient,
  NonConvergence,
  InvalidComparison,
  Join,
  InvalidArgument,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config-error";
    case ErrorKind::Ingest: return "ingest-error";
    case ErrorKind::MissingPrerequisite: return "missing-prerequisite";
    case ErrorKind::Retryable: return "retryable-error";
    case ErrorKind::Protocol: return "protocol-error";
    case ErrorKind::Credential: return "credential-error";
    case ErrorKind::Integrity: return "integrity-error";
    case ErrorKind::Unrateable: return "unrateable-item";
    case ErrorKind::Degenerate: return "degenerate-input";
    case ErrorKind::RankDeficient: return "rank-deficient";
    case ErrorKind::NonConvergence: return "non-convergence";
    case ErrorKind::InvalidComparison: return "invalid-comparison";
    case ErrorKind::Join: return "join-error";
    case ErrorKind::InvalidArgument: return "invalid-argument";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace normforge
