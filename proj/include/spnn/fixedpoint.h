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

#include <cstdint>

namespace spnn {

// An element of Z_{2^l}. The ring width travels with the Ring, not the value.
struct RingElement {
  std::uint64_t value = 0;

  friend bool operator==(RingElement, RingElement) = default;
};

// Wrapping arithmetic modulo 2^bits, 1 <= bits <= 64.
class Ring {
 public:
  explicit Ring(int bits = 64);

  int bits() const { return bits_; }
  std::uint64_t mask() const { return mask_; }

  std::uint64_t reduce(std::uint64_t x) const { return x & mask_; }
  std::uint64_t add(std::uint64_t a, std::uint64_t b) const { return (a + b) & mask_; }
  std::uint64_t sub(std::uint64_t a, std::uint64_t b) const { return (a - b) & mask_; }
  std::uint64_t mul(std::uint64_t a, std::uint64_t b) const { return (a * b) & mask_; }
  std::uint64_t neg(std::uint64_t a) const { return (0 - a) & mask_; }

  // Two's-complement reading: [2^(l-1), 2^l) maps to negative numbers.
  std::int64_t to_signed(std::uint64_t x) const;
  std::uint64_t from_signed(std::int64_t x) const {
    return static_cast<std::uint64_t>(x) & mask_;
  }

  // Bytes needed to carry one element on the wire.
  int element_bytes() const { return (bits_ + 7) / 8; }

  friend bool operator==(const Ring&, const Ring&) = default;

 private:
  int bits_;
  std::uint64_t mask_;
};

RingElement ring_add(RingElement a, RingElement b, const Ring& ring);
RingElement ring_sub(RingElement a, RingElement b, const Ring& ring);
RingElement ring_mul(RingElement a, RingElement b, const Ring& ring);

// Reals as round(x * 2^frac_bits) in Z_{2^l}. Requires 0 < frac_bits < l/2.
class FixedPointCodec {
 public:
  explicit FixedPointCodec(int ring_bits = 64, int frac_bits = 16);

  const Ring& ring() const { return ring_; }
  int frac_bits() const { return frac_bits_; }
  double scale() const { return scale_; }

  // Largest magnitude accepted by encode (exclusive): 2^(l - frac_bits - 1).
  double max_magnitude() const { return max_magnitude_; }

  // Rounds half away from zero. Throws Error(kRange) outside max_magnitude().
  RingElement encode(double x) const;
  std::int64_t encode_signed(double x) const;

  double decode(RingElement e) const;
  double decode_signed(std::int64_t x) const { return static_cast<double>(x) / scale_; }

  // Arithmetic right shift of the signed reading by frac_bits. Used on values
  // that carry 2 * frac_bits fractional bits after a ring product.
  RingElement truncate(RingElement e) const;

  // Local truncation of one additive share (party 0 or 1). The two truncated
  // shares reconstruct to truncate(secret) up to one unit in the last place,
  // except with probability about 2^(lx + 1 - l) when |secret| < 2^lx.
  std::uint64_t truncate_share(int party, std::uint64_t share) const;
  // Same with an explicit shift (0 <= bits < l).
  std::uint64_t truncate_share(int party, std::uint64_t share, int bits) const;

  friend bool operator==(const FixedPointCodec&, const FixedPointCodec&) = default;

 private:
  Ring ring_;
  int frac_bits_;
  double scale_;
  double max_magnitude_;
};

}  // namespace spnn
