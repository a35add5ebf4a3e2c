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

#include "spnn/fixedpoint.h"

#include <cmath>
#include <string>

#include "spnn/error.h"

namespace spnn {

Ring::Ring(int bits) : bits_(bits) {
  if (bits < 1 || bits > 64) {
    throw Error(ErrorCode::kInvalidConfig,
                "ring width must be in [1, 64], got " + std::to_string(bits));
  }
  mask_ = bits == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << bits) - 1;
}

std::int64_t Ring::to_signed(std::uint64_t x) const {
  x &= mask_;
  if (bits_ == 64) return static_cast<std::int64_t>(x);
  const std::uint64_t sign = std::uint64_t{1} << (bits_ - 1);
  if (x & sign) return static_cast<std::int64_t>(x) - (std::int64_t{1} << bits_);
  return static_cast<std::int64_t>(x);
}

RingElement ring_add(RingElement a, RingElement b, const Ring& ring) {
  return {ring.add(a.value, b.value)};
}

RingElement ring_sub(RingElement a, RingElement b, const Ring& ring) {
  return {ring.sub(a.value, b.value)};
}

RingElement ring_mul(RingElement a, RingElement b, const Ring& ring) {
  return {ring.mul(a.value, b.value)};
}

FixedPointCodec::FixedPointCodec(int ring_bits, int frac_bits)
    : ring_(ring_bits), frac_bits_(frac_bits) {
  if (frac_bits <= 0 || 2 * frac_bits >= ring_bits) {
    throw Error(ErrorCode::kInvalidConfig,
                "fractional bits must satisfy 0 < l_f < l/2 (l=" +
                    std::to_string(ring_bits) + ", l_f=" +
                    std::to_string(frac_bits) + ")");
  }
  scale_ = std::ldexp(1.0, frac_bits);
  max_magnitude_ = std::ldexp(1.0, ring_bits - frac_bits - 1);
}

std::int64_t FixedPointCodec::encode_signed(double x) const {
  if (!std::isfinite(x) || std::fabs(x) >= max_magnitude_) {
    throw Error(ErrorCode::kRange, "value " + std::to_string(x) +
                                       " outside fixed-point range");
  }
  // std::round is half-away-from-zero.
  return static_cast<std::int64_t>(std::round(x * scale_));
}

RingElement FixedPointCodec::encode(double x) const {
  return {ring_.from_signed(encode_signed(x))};
}

double FixedPointCodec::decode(RingElement e) const {
  return static_cast<double>(ring_.to_signed(e.value)) / scale_;
}

RingElement FixedPointCodec::truncate(RingElement e) const {
  return {ring_.from_signed(ring_.to_signed(e.value) >> frac_bits_)};
}

std::uint64_t FixedPointCodec::truncate_share(int party, std::uint64_t share) const {
  return truncate_share(party, share, frac_bits_);
}

std::uint64_t FixedPointCodec::truncate_share(int party, std::uint64_t share, int bits) const {
  if (bits < 0 || bits >= ring_.bits()) throw Error(ErrorCode::kRange, "shift outside ring width");
  share = ring_.reduce(share);
  if (party == 0) return share >> bits;
  return ring_.neg(ring_.neg(share) >> bits);
}

}  // namespace spnn
