/* Copyright 2026 The ArrayFlow Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace arrayflow {

/// Base of every pipeline error. `kind()` is the stable typed name that the
/// CLI prints (e.g. "ShapeMismatch").
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

#define ARRAYFLOW_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  }

ARRAYFLOW_DEFINE_ERROR(ShapeMismatch);
ARRAYFLOW_DEFINE_ERROR(BadSubscript);
ARRAYFLOW_DEFINE_ERROR(DTypeMismatch);
ARRAYFLOW_DEFINE_ERROR(InvalidNode);
ARRAYFLOW_DEFINE_ERROR(TagConflict);
ARRAYFLOW_DEFINE_ERROR(UnboundPlaceholder);
ARRAYFLOW_DEFINE_ERROR(CommunicationInSingleProcessGraph);
ARRAYFLOW_DEFINE_ERROR(TracingError);
ARRAYFLOW_DEFINE_ERROR(SignatureUnsupported);
ARRAYFLOW_DEFINE_ERROR(BindingMismatch);
ARRAYFLOW_DEFINE_ERROR(OutOfBoundsIndex);
ARRAYFLOW_DEFINE_ERROR(CircularCommunication);
ARRAYFLOW_DEFINE_ERROR(InfeasiblePlacement);
ARRAYFLOW_DEFINE_ERROR(InvalidProgram);

#undef ARRAYFLOW_DEFINE_ERROR

/// Raised by lowering when composing index maps would exceed the supported
/// gather depth. `culprit_hash` identifies the node that must be
/// materialized to make the composition legal.
class UnsupportedComposition : public Error {
 public:
  UnsupportedComposition(const std::string& message, std::uint64_t culprit_hash,
                         const void* culprit)
      : Error("UnsupportedComposition", message),
        culprit_hash_(culprit_hash),
        culprit_(culprit) {}

  std::uint64_t culprit_hash() const { return culprit_hash_; }
  const void* culprit() const { return culprit_; }

 private:
  std::uint64_t culprit_hash_;
  const void* culprit_;
};

/// Identifies one point-to-point message: (source rank, destination rank, tag).
struct CommKey {
  int source = 0;
  int dest = 0;
  std::int64_t tag = 0;

  friend auto operator<=>(const CommKey&, const CommKey&) = default;
  std::string to_string() const;
};

class MismatchedCommunication : public Error {
 public:
  MismatchedCommunication(const std::string& message, std::vector<CommKey> offenders)
      : Error("MismatchedCommunication", message), offenders_(std::move(offenders)) {}

  const std::vector<CommKey>& offenders() const { return offenders_; }

 private:
  std::vector<CommKey> offenders_;
};

class DeadlockDetected : public Error {
 public:
  DeadlockDetected(const std::string& message, std::vector<CommKey> missing)
      : Error("DeadlockDetected", message), missing_(std::move(missing)) {}

  /// Receives that were posted but never satisfied.
  const std::vector<CommKey>& missing() const { return missing_; }

 private:
  std::vector<CommKey> missing_;
};

}  // namespace arrayflow
