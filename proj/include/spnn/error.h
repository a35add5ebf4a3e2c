// Copyright 2026 The SPNN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
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

namespace spnn {

enum class ErrorCode {
  kRange,
  kPartyMismatch,
  kDimensionMismatch,
  kTripleReuse,
  kTripleShapeMismatch,
  kTripleExhausted,
  kChannelClosed,
  kPlaintextOutOfRange,
  kKeyMismatch,
  kMalformedCiphertext,
  kStaleCache,
  kDegenerateLabels,
  kInvalidSpec,
  kInvalidConfig,
  kRowCountMismatch,
  kSequenceViolation,
  kShapeMismatch,
  kFrameCorrupt,
  kFrameTooLarge,
  kLinkClosed,
  kConnectRefused,
  kHandshakeTimeout,
  kPeerClosed,
  kDeadlock,
  kParseError,
  kEmptyDataset,
  kDegenerateProperty,
  kIo,
};

std::string_view error_code_name(ErrorCode code);

// Every failure raised by the library carries one of the codes above so the
// CLI can emit a machine-readable error object.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace spnn
