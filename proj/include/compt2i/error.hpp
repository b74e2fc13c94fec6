// Copyright 2026 The compt2i Authors.
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

namespace compt2i {

// Failure categories map one-to-one onto CLI exit codes.
enum class ErrorKind {
  kInvalidArgument,
  kConfig,
  kStageHashMismatch,
  kLeakage,
  kRole,
  kIo,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error InvalidArgument(const std::string& what) {
  return Error(ErrorKind::kInvalidArgument, what);
}
inline Error ConfigError(const std::string& what) {
  return Error(ErrorKind::kConfig, what);
}
inline Error StageHashMismatch(const std::string& what) {
  return Error(ErrorKind::kStageHashMismatch, what);
}
inline Error LeakageError(const std::string& what) {
  return Error(ErrorKind::kLeakage, what);
}
inline Error RoleError(const std::string& what) {
  return Error(ErrorKind::kRole, what);
}
inline Error IoError(const std::string& what) {
  return Error(ErrorKind::kIo, what);
}

inline int ExitCodeFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return 2;
    case ErrorKind::kStageHashMismatch:
      return 3;
    case ErrorKind::kLeakage:
    case ErrorKind::kRole:
      return 4;
    default:
      return 1;
  }
}

#define COMPT2I_CHECK(cond, msg)                 \
  do {                                           \
    if (!(cond)) throw ::compt2i::InvalidArgument(msg); \
  } while (0)

}  // namespace compt2i
