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

#include "spnn/error.h"

namespace spnn {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kRange: return "RangeError";
    case ErrorCode::kPartyMismatch: return "PartyMismatch";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kTripleReuse: return "TripleReuse";
    case ErrorCode::kTripleShapeMismatch: return "TripleShapeMismatch";
    case ErrorCode::kTripleExhausted: return "TripleExhausted";
    case ErrorCode::kChannelClosed: return "ChannelClosed";
    case ErrorCode::kPlaintextOutOfRange: return "PlaintextOutOfRange";
    case ErrorCode::kKeyMismatch: return "KeyMismatch";
    case ErrorCode::kMalformedCiphertext: return "MalformedCiphertext";
    case ErrorCode::kStaleCache: return "StaleCache";
    case ErrorCode::kDegenerateLabels: return "DegenerateLabels";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kRowCountMismatch: return "RowCountMismatch";
    case ErrorCode::kSequenceViolation: return "SequenceViolation";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kFrameCorrupt: return "FrameCorrupt";
    case ErrorCode::kFrameTooLarge: return "FrameTooLarge";
    case ErrorCode::kLinkClosed: return "LinkClosed";
    case ErrorCode::kConnectRefused: return "ConnectRefused";
    case ErrorCode::kHandshakeTimeout: return "HandshakeTimeout";
    case ErrorCode::kPeerClosed: return "PeerClosed";
    case ErrorCode::kDeadlock: return "Deadlock";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kDegenerateProperty: return "DegenerateProperty";
    case ErrorCode::kIo: return "IoError";
  }
  return "UnknownError";
}

}  // namespace spnn
