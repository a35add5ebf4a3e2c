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

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <numbers>

#include "spnn/error.h"
#include "spnn/prg.h"

namespace spnn {
namespace {

TEST(FixedPointTest, EncodeKnownValues) {
  FixedPointCodec codec;
  EXPECT_EQ(codec.encode(1.5).value, 98304u);
  EXPECT_EQ(codec.encode(0.0).value, 0u);
  // 2^64 - 16384 written without overflow.
  EXPECT_EQ(codec.encode(-0.25).value, ~std::uint64_t{0} - 16384 + 1);
}

TEST(FixedPointTest, DecodeKnownValues) {
  FixedPointCodec codec;
  EXPECT_EQ(codec.decode(RingElement{98304}), 1.5);
  EXPECT_EQ(codec.decode(RingElement{~std::uint64_t{0} - 16384 + 1}), -0.25);
  EXPECT_NEAR(codec.decode(codec.encode(std::numbers::pi)), std::numbers::pi,
              std::ldexp(1.0, -17));
}

TEST(FixedPointTest, RoundsHalfAwayFromZero) {
  FixedPointCodec codec;
  const double half_ulp = std::ldexp(1.0, -17);
  EXPECT_EQ(codec.encode(half_ulp).value, 1u);
  EXPECT_EQ(codec.ring().to_signed(codec.encode(-half_ulp).value), -1);
}

TEST(FixedPointTest, RangeCheck) {
  FixedPointCodec codec;
  EXPECT_THROW(codec.encode(std::ldexp(1.0, 47)), Error);
  EXPECT_THROW(codec.encode(-std::ldexp(1.0, 47)), Error);
  EXPECT_THROW(codec.encode(NAN), Error);
  EXPECT_NO_THROW(codec.encode(std::ldexp(1.0, 46)));
}

TEST(FixedPointTest, RejectsBadParameters) {
  EXPECT_THROW(FixedPointCodec(64, 0), Error);
  EXPECT_THROW(FixedPointCodec(64, 32), Error);
  EXPECT_THROW(FixedPointCodec(12, 6), Error);
  EXPECT_NO_THROW(FixedPointCodec(12, 5));
}

TEST(FixedPointTest, RingArithmeticWraps) {
  for (int bits : {8, 12, 16, 64}) {
    Ring ring(bits);
    const RingElement top{ring.mask()};
    EXPECT_EQ(ring_add(top, RingElement{1}, ring).value, 0u);
    EXPECT_EQ(ring_sub(RingElement{0}, RingElement{1}, ring).value, ring.mask());
    EXPECT_EQ(ring_mul(RingElement{ring.reduce(0xabcdef)}, RingElement{1}, ring).value,
              ring.reduce(0xabcdef));
  }
}

TEST(FixedPointTest, RoundTripRandom) {
  FixedPointCodec codec;
  Prg rng(11);
  const double bound = std::ldexp(1.0, -17);
  for (int i = 0; i < 100000; ++i) {
    const double x = (2.0 * rng.uniform_real() - 1.0) * 1024.0;
    ASSERT_LE(std::fabs(codec.decode(codec.encode(x)) - x), bound) << x;
  }
}

TEST(FixedPointTest, AdditionIsExactOnGrid) {
  FixedPointCodec codec;
  Prg rng(12);
  for (int i = 0; i < 10000; ++i) {
    const double a = std::ldexp(static_cast<double>(static_cast<std::int64_t>(rng.uniform(1 << 26)) - (1 << 25)), -16);
    const double b = std::ldexp(static_cast<double>(static_cast<std::int64_t>(rng.uniform(1 << 26)) - (1 << 25)), -16);
    ASSERT_EQ(codec.decode(ring_add(codec.encode(a), codec.encode(b), codec.ring())), a + b);
  }
}

TEST(FixedPointTest, TruncatedProductExamples) {
  FixedPointCodec codec;
  const auto& ring = codec.ring();
  const auto p = codec.truncate(ring_mul(codec.encode(1.5), codec.encode(2.0), ring));
  EXPECT_LE(std::abs(ring.to_signed(p.value) - ring.to_signed(codec.encode(3.0).value)), 1);
  const auto q = codec.truncate(ring_mul(codec.encode(-1.0), codec.encode(0.5), ring));
  EXPECT_LE(std::abs(ring.to_signed(q.value) - ring.to_signed(codec.encode(-0.5).value)), 1);
  EXPECT_EQ(codec.truncate(RingElement{0}).value, 0u);
}

// The bound covers the truncation itself, so the reference product uses the
// representable values decode(encode(a)) and decode(encode(b)).
TEST(FixedPointTest, TruncatedProductErrorBound) {
  FixedPointCodec codec;
  Prg rng(13);
  const double bound = std::ldexp(1.0, -15);
  for (int i = 0; i < 100000; ++i) {
    const double a = codec.decode(codec.encode((2.0 * rng.uniform_real() - 1.0) * 100.0));
    const double b = codec.decode(codec.encode((2.0 * rng.uniform_real() - 1.0) * 100.0));
    const auto prod = codec.truncate(ring_mul(codec.encode(a), codec.encode(b), codec.ring()));
    ASSERT_LE(std::fabs(codec.decode(prod) - a * b), bound) << a << " " << b;
  }
}

// floor(v / 2^f) on the signed reading, computed with integer division.
std::int64_t floor_shift(std::int64_t v, int f) {
  const std::int64_t d = std::int64_t{1} << f;
  std::int64_t q = v / d;
  if (v % d != 0 && v < 0) --q;
  return q;
}

TEST(FixedPointTest, TruncateExhaustiveSmallRing) {
  FixedPointCodec codec(12, 4);
  const auto& ring = codec.ring();
  for (std::uint64_t x = 0; x < (1u << 12); ++x) {
    const std::int64_t s = x >= 2048 ? static_cast<std::int64_t>(x) - 4096 : static_cast<std::int64_t>(x);
    const std::uint64_t expected = static_cast<std::uint64_t>(floor_shift(s, 4)) & 0xfff;
    ASSERT_EQ(codec.truncate(RingElement{x}).value, expected) << x;
    ASSERT_LT(codec.truncate(RingElement{x}).value, 4096u);
  }
  EXPECT_EQ(ring.bits(), 12);
}

TEST(FixedPointTest, ShareTruncationWithinOneUlp) {
  FixedPointCodec codec;
  const auto& ring = codec.ring();
  Prg rng(14);
  int failures = 0;
  for (int i = 0; i < 20000; ++i) {
    const std::int64_t secret = static_cast<std::int64_t>(rng.uniform(1u << 30)) - (1 << 29);
    const std::uint64_t r = rng();
    const std::uint64_t s0 = ring.sub(ring.from_signed(secret), r);
    const std::uint64_t t = ring.add(codec.truncate_share(0, s0), codec.truncate_share(1, r));
    const std::int64_t diff = ring.to_signed(t) - floor_shift(secret, 16);
    if (diff < -1 || diff > 1) ++failures;
  }
  // Failure probability is about 2^-33 per trial here.
  EXPECT_EQ(failures, 0);
}

}  // namespace
}  // namespace spnn
