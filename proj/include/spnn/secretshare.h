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

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <utility>
#include <vector>

#include "spnn/fixedpoint.h"
#include "spnn/prg.h"

namespace spnn {

// Two-party additive secret sharing over Z_{2^l}.

struct Share {
  int party = 0;
  RingElement value;
};

std::pair<Share, Share> shr(RingElement secret, const Ring& ring, Prg& rng);
// Variant with caller-chosen mask r (share_1 = r).
std::pair<Share, Share> shr_with_mask(RingElement secret, RingElement r,
                                      const Ring& ring);
RingElement rec(const Share& s0, const Share& s1, const Ring& ring);

// Dense row-major matrix of ring elements.
class RingMatrix {
 public:
  RingMatrix() = default;
  RingMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0) {}
  RingMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint64_t> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  std::uint64_t& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  std::uint64_t at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<std::uint64_t> data() { return data_; }
  std::span<const std::uint64_t> data() const { return data_; }
  std::vector<std::uint64_t>& storage() { return data_; }

  friend bool operator==(const RingMatrix&, const RingMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint64_t> data_;
};

RingMatrix ring_matmul(const RingMatrix& a, const RingMatrix& b, const Ring& ring);
RingMatrix ring_add(const RingMatrix& a, const RingMatrix& b, const Ring& ring);
RingMatrix ring_sub(const RingMatrix& a, const RingMatrix& b, const Ring& ring);
// Horizontal concatenation [a | b] and vertical stacking [a ; b].
RingMatrix ring_hconcat(const RingMatrix& a, const RingMatrix& b);
RingMatrix ring_vconcat(const RingMatrix& a, const RingMatrix& b);
RingMatrix ring_transpose(const RingMatrix& a);
RingMatrix random_ring_matrix(std::size_t rows, std::size_t cols,
                              const Ring& ring, Prg& rng);

// One party's additive share of a matrix.
struct ShareMatrix {
  int party = 0;
  RingMatrix value;

  std::size_t rows() const { return value.rows(); }
  std::size_t cols() const { return value.cols(); }
};

using SharedPair = std::array<ShareMatrix, 2>;

SharedPair share_matrix(const RingMatrix& secret, const Ring& ring, Prg& rng);
RingMatrix reconstruct(const ShareMatrix& s0, const ShareMatrix& s1, const Ring& ring);
inline RingMatrix reconstruct(const SharedPair& p, const Ring& ring) {
  return reconstruct(p[0], p[1], ring);
}

// Local, communication-free addition of two shares held by one party.
ShareMatrix add_shared(const ShareMatrix& a, const ShareMatrix& b, const Ring& ring);

// Correlated randomness for one multiplication: reconstruct(w) =
// reconstruct(u) * reconstruct(v). Scalar and matrix forms share this type;
// the scalar form is a 1x1 matrix triple.
struct BeaverTriple {
  int party = 0;
  RingMatrix u, v, w;
  bool consumed = false;
};

using TriplePair = std::array<BeaverTriple, 2>;

// Trusted-dealer generation. u (n x d) and v (d x m) are uniform; w = u * v.
TriplePair dealer_gen_triple(std::size_t n, std::size_t d, std::size_t m,
                             const Ring& ring, Prg& rng);
std::vector<TriplePair> dealer_gen_triples(std::size_t count, std::size_t n,
                                           std::size_t d, std::size_t m,
                                           const Ring& ring, Prg& rng);

// Bidirectional in-memory port between party 0 and party 1 with per-direction
// byte counters. Messages are FIFO per direction.
class PairwiseChannel {
 public:
  explicit PairwiseChannel(const Ring& ring) : element_bytes_(ring.element_bytes()) {}

  void send(int from_party, std::vector<std::uint64_t> words);
  std::vector<std::uint64_t> recv(int to_party);
  void close() { closed_ = true; }

  // Element payload bytes sent by `party` (ceil(l/8) bytes per element).
  std::uint64_t bytes_sent(int party) const { return bytes_sent_[party]; }
  std::uint64_t messages_sent(int party) const { return messages_sent_[party]; }

 private:
  std::size_t element_bytes_;
  std::array<std::deque<std::vector<std::uint64_t>>, 2> queues_;
  std::array<std::uint64_t, 2> bytes_sent_{};
  std::array<std::uint64_t, 2> messages_sent_{};
  bool closed_ = false;
};

// Party-local halves of the Beaver protocol, so callers can put the opening
// on any transport.
struct MaskedOpening {
  RingMatrix e;  // x_i - u_i
  RingMatrix f;  // y_i - v_i
};

MaskedOpening beaver_mask(const ShareMatrix& x, const ShareMatrix& y,
                          const BeaverTriple& triple, const Ring& ring);

// Combines the opened e, f into this party's share of x * y and marks the
// triple consumed. Party 0: e*y_0 + x_0*f + w_0; party 1: e*y_1 + x_1*f + w_1 - e*f.
ShareMatrix beaver_combine(const ShareMatrix& x, const ShareMatrix& y,
                           const RingMatrix& e, const RingMatrix& f,
                           BeaverTriple& triple, const Ring& ring);

void check_triple_shape(const BeaverTriple& t, std::size_t n, std::size_t d,
                        std::size_t m);

// Two-party element product over the channel (scalar form).
std::pair<Share, Share> beaver_mul(const std::pair<Share, Share>& a,
                                   const std::pair<Share, Share>& b,
                                   TriplePair& triple, PairwiseChannel& ch,
                                   const Ring& ring);

// Shared matrix product with one masked opening per party and no truncation.
SharedPair matmul_shared_raw(const SharedPair& x, const SharedPair& w,
                             TriplePair& triple, PairwiseChannel& ch,
                             const Ring& ring);

// One party's half of the cross-term round: openings for x_0 * w_1 and
// x_1 * w_0 packed into a single message.
struct CrossTermOpening {
  std::array<MaskedOpening, 2> mine;
  std::vector<std::uint64_t> words;
};

CrossTermOpening cross_terms_open(const ShareMatrix& x, const ShareMatrix& w,
                                  std::array<BeaverTriple*, 2> triples,
                                  const Ring& ring);

// Adds the local product x_i * w_i to both cross-term shares and truncates.
ShareMatrix cross_terms_finish(const ShareMatrix& x, const ShareMatrix& w,
                               const CrossTermOpening& mine,
                               const std::vector<std::uint64_t>& theirs,
                               std::array<BeaverTriple*, 2> triples,
                               const FixedPointCodec& codec);

// Shared product of shared fixed-point matrices: both local
// products <x>_i <w>_i plus the two cross terms <x>_0 <w>_1 and <x>_1 <w>_0,
// which run through Beaver in a single opening round. Each party truncates
// its accumulated share once.
SharedPair matmul_shared(const SharedPair& x, const SharedPair& w,
                         std::array<TriplePair, 2>& cross_triples,
                         PairwiseChannel& ch, const FixedPointCodec& codec);

}  // namespace spnn
